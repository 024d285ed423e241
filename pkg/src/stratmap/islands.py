"""Island seeding and ring migration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

from .dsl import Program, parse_program
from .feature_map import CandidateRecord, EvolutionaryDatabase, insert_candidate
from .generators.base import Insight, categorize

BUY_HOLD = "buy_hold"

_BODY = {
    "momentum_trend": """
indicator fast = sma(20)
indicator slow = sma(50)
entry: fast > slow
exit: fast < slow
sizing: equal_weight
rebalance: daily
""",
    "mean_reversion": """
indicator z = bollinger_z(20)
entry: z < -1
exit: z > 0
sizing: equal_weight
rebalance: daily
""",
    "volatility": """
indicator vol_fast = rolling_vol(20)
indicator vol_slow = rolling_vol(60)
entry: vol_fast < vol_slow
exit: vol_fast > vol_slow * 1.2
sizing: equal_weight
rebalance: daily
""",
    "volume_liquidity": """
indicator avg_volume = sma(20, volume)
entry: volume > avg_volume * 1.2
exit: volume < avg_volume * 0.8
sizing: equal_weight
rebalance: daily
""",
    "breakout_pattern": """
indicator upper = highest(20)
indicator lower = lowest(20)
entry: close >= upper
exit: close <= lower
sizing: equal_weight
rebalance: daily
""",
    "correlation_pairs": """
indicator rel = rel_momentum(60)
entry: rel > 0
exit: rel < 0
sizing: equal_weight
rebalance: daily
""",
    "risk_allocation": """
entry: true
exit: false
sizing: inverse_volatility(60)
rebalance: monthly
""",
    "seasonal_calendar": """
entry: day_of_month >= 25 or day_of_month <= 3
exit: day_of_month > 3 and day_of_month < 25
sizing: equal_weight
rebalance: daily
""",
    BUY_HOLD: """
entry: true
exit: false
sizing: equal_weight
rebalance: once
""",
}


class SeedBacktestFailure(RuntimeError):
    pass


@dataclass
class Island:
    id: int
    seed_category: str
    population: list[str] = field(default_factory=list)
    insights: list[Insight] = field(default_factory=list)

    def add(self, record_id: str) -> bool:
        if record_id in self.population:
            return False
        self.population.append(record_id)
        return True

    def to_dict(self) -> dict:
        return {"id": self.id, "seed_category": self.seed_category,
                "population": list(self.population),
                "insights": [i.to_dict() for i in self.insights]}

    @classmethod
    def from_dict(cls, d: dict) -> "Island":
        return cls(d["id"], d["seed_category"], list(d["population"]),
                   [Insight.from_dict(i) for i in d["insights"]])


def seed_program(category: str, taxonomy: Sequence[str], overrides: Mapping[str, str] | None = None,
                 kind_table: Mapping[str, str] | None = None) -> Program:
    """Representative starting program for a category (or ``buy_hold``)."""
    if overrides and category in overrides:
        program = parse_program(overrides[category])
    elif category in _BODY:
        program = parse_program(f"program seed_{category}\ntags\n{_BODY[category].lstrip()}")
    else:
        raise KeyError(f"no seed template for category {category!r}; supply one in the config seeds")
    tags = () if category == BUY_HOLD else categorize(program, taxonomy, kind_table)
    return replace(program, name=f"seed_{category}", tags=tags)


def init_islands(taxonomy: Sequence[str], db: EvolutionaryDatabase,
                 evaluate: Callable[[Program, int], CandidateRecord],
                 overrides: Mapping[str, str] | None = None,
                 kind_table: Mapping[str, str] | None = None,
                 insert: Callable[[CandidateRecord], object] | None = None,
                 ) -> tuple[list[Island], list[CandidateRecord]]:
    """One island per category plus buy-and-hold; seeds are evaluated and inserted.

    ``evaluate(program, island_id)`` must return a fully scored record;
    ``insert`` replaces the plain database insertion (it must assign the id).
    """
    if not taxonomy:
        raise ValueError("taxonomy must be non-empty")
    islands, seeds = [], []
    for i, category in enumerate(list(taxonomy) + [BUY_HOLD]):
        program = seed_program(category, taxonomy, overrides, kind_table)
        record = evaluate(program, i)
        if record.failed:
            reason = record.error or (record.metrics.reason if record.metrics else "no metrics")
            raise SeedBacktestFailure(f"seed for {category!r} did not produce valid metrics: {reason}")
        if insert is None:
            insert_candidate(db, record)
        else:
            insert(record)
        island = Island(i, category, [record.id])
        islands.append(island)
        seeds.append(record)
    db.islands = islands
    return islands, seeds


def top_members(island: Island, db: EvolutionaryDatabase, fraction: float) -> list[str]:
    pool = [rid for rid in island.population if not db.records[rid].failed]
    if not pool:
        return []
    k = min(len(pool), math.ceil(fraction * len(island.population)))
    # stable sort keeps insertion order among equal scores
    return sorted(pool, key=lambda rid: -db.records[rid].score)[:k]


def migrate(islands: list[Island], db: EvolutionaryDatabase, fraction: float = 0.10,
            generation: int | None = None) -> list[dict]:
    """Copy each island's top members to both ring neighbours; returns one log entry per copy batch."""
    if len(islands) < 2:
        return []
    ordered = sorted(islands, key=lambda isl: isl.id)
    n = len(ordered)
    # choose every island's migrants before any copying so the order of islands does not matter
    migrants = {isl.id: top_members(isl, db, fraction) for isl in ordered}
    log = []
    for k, src in enumerate(ordered):
        left, right = ordered[(k - 1) % n], ordered[(k + 1) % n]
        for dst in (left,) if left is right else (left, right):
            copied = [rid for rid in migrants[src.id] if dst.add(rid)]
            log.append({"generation": generation, "source": src.id, "destination": dst.id,
                        "candidate_ids": copied})
    return log


__all__ = ["BUY_HOLD", "Island", "SeedBacktestFailure", "seed_program", "init_islands", "migrate",
           "top_members"]
