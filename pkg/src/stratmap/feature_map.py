"""Binned elite archive plus the archive of every candidate ever produced."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .dsl import Program, parse_program
from .metrics import METRIC_NAMES, InvalidMetrics, MetricSet, score_or_fail

EQUITY_TAXONOMY = (
    "momentum_trend", "mean_reversion", "volatility", "volume_liquidity",
    "breakout_pattern", "correlation_pairs", "risk_allocation", "seasonal_calendar",
)

DEFAULT_RANGES = {
    "num_transactions": (0.0, 5000.0),
    "max_drawdown": (-1.0, 0.0),
    "sharpe": (-2.0, 4.0),
    "sortino": (-2.0, 6.0),
    "cumulative_return": (-1.0, 5.0),
}

DIM_ALIASES = {
    "mdd": "max_drawdown", "drawdown": "max_drawdown", "trades": "num_transactions",
    "frequency": "num_transactions", "sr": "sharpe", "sor": "sortino", "cr": "cumulative_return",
    "return": "cumulative_return", "ir": "information_ratio",
}

EMPTY = ""


class UnknownDimension(KeyError):
    pass


class UnknownTag(ValueError):
    pass


class NonFiniteValue(ValueError):
    pass


@dataclass(frozen=True)
class FeatureDimension:
    name: str
    kind: str  # "continuous" | "categorical"
    range_min: float = 0.0
    range_max: float = 1.0
    bins: int = 16
    taxonomy: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "continuous":
            if self.bins < 1:
                raise ValueError(f"{self.name}: bins must be >= 1")
            if not self.range_min < self.range_max:
                raise ValueError(f"{self.name}: range_min must be < range_max")
        elif self.kind == "categorical":
            if not self.taxonomy or len(set(self.taxonomy)) != len(self.taxonomy):
                raise ValueError(f"{self.name}: taxonomy must be non-empty with unique names")
        else:
            raise ValueError(f"unknown dimension kind {self.kind!r}")

    @property
    def width(self) -> int:
        return len(self.taxonomy)

    @property
    def size(self) -> int:
        return self.bins if self.kind == "continuous" else 2 ** self.width

    def labels(self) -> list:
        if self.kind == "continuous":
            return list(range(self.bins))
        return ["".join(b) for b in itertools.product("01", repeat=self.width)]

    def to_dict(self) -> dict:
        if self.kind == "continuous":
            return {"name": self.name, "kind": self.kind, "range_min": self.range_min,
                    "range_max": self.range_max, "bins": self.bins}
        return {"name": self.name, "kind": self.kind, "taxonomy": list(self.taxonomy)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureDimension":
        d = dict(d)
        if "taxonomy" in d:
            d["taxonomy"] = tuple(d["taxonomy"])
        return cls(**d)


def default_dimensions(taxonomy: Sequence[str] | None = EQUITY_TAXONOMY, bins: int = 16,
                       ranges: dict | None = None, use_category: bool = True) -> list[FeatureDimension]:
    ranges = {**DEFAULT_RANGES, **(ranges or {})}
    dims = []
    if use_category and taxonomy:
        dims.append(FeatureDimension("category", "categorical", taxonomy=tuple(taxonomy)))
    for name in ("num_transactions", "max_drawdown", "sharpe", "sortino", "cumulative_return"):
        lo, hi = ranges[name]
        dims.append(FeatureDimension(name, "continuous", float(lo), float(hi), bins))
    return dims


def bin_continuous(value: float, dim: FeatureDimension) -> int:
    if not math.isfinite(value):
        raise NonFiniteValue(f"{dim.name}: {value}")
    width = (dim.range_max - dim.range_min) / dim.bins
    idx = math.floor((value - dim.range_min) / width)
    return min(max(idx, 0), dim.bins - 1)


def encode_category(tags: Iterable[str], taxonomy: Sequence[str]) -> str:
    tags = set(tags)
    unknown = tags - set(taxonomy)
    if unknown:
        raise UnknownTag(f"tags {sorted(unknown)} not in taxonomy")
    return "".join("1" if t in tags else "0" for t in taxonomy)


@dataclass(frozen=True)
class FeatureVector:
    """One entry per dimension: an int bin for continuous dims, a bitstring for categorical ones."""

    values: tuple

    @property
    def key(self) -> str:
        return ":".join(str(v) for v in self.values)

    @classmethod
    def from_key(cls, key: str, dims: Sequence[FeatureDimension]) -> "FeatureVector":
        parts = key.split(":")
        return cls(tuple(p if d.kind == "categorical" else int(p) for p, d in zip(parts, dims)))


def feature_vector_from(metrics: MetricSet, tags: Iterable[str],
                        dims: Sequence[FeatureDimension]) -> FeatureVector:
    if metrics is None or not metrics.valid:
        raise InvalidMetrics("cannot place a candidate with invalid metrics")
    tags = tuple(tags)
    out = []
    for d in dims:
        if d.kind == "categorical":
            out.append(encode_category([t for t in tags if t in d.taxonomy], d.taxonomy))
        else:
            out.append(bin_continuous(metrics.get(d.name), d))
    return FeatureVector(tuple(out))


@dataclass
class CandidateRecord:
    id: str
    island_id: int
    generation: int
    program_text: str
    hypothesis: dict = field(default_factory=dict)
    metrics: MetricSet | None = None
    analysis: dict = field(default_factory=dict)
    feature_vector: FeatureVector | None = None
    parent_id: str | None = None
    cousin_ids: tuple[str, ...] = ()
    error: str = ""
    report: object | None = field(default=None, repr=False, compare=False)

    @cached_property
    def program(self) -> Program:
        return parse_program(self.program_text)

    @property
    def score(self) -> float:
        return -math.inf if self.error else score_or_fail(self.metrics)

    @property
    def failed(self) -> bool:
        return bool(self.error) or self.metrics is None or not self.metrics.valid

    def to_dict(self) -> dict:
        # field order is part of the checkpoint format
        return {
            "id": self.id,
            "island_id": self.island_id,
            "generation": self.generation,
            "parent_id": self.parent_id,
            "cousin_ids": list(self.cousin_ids),
            "score": self.score if math.isfinite(self.score) else None,
            "feature_vector": self.feature_vector.key if self.feature_vector else None,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "error": self.error,
            "hypothesis": self.hypothesis,
            "program": self.program_text,
            "analysis": self.analysis,
        }

    @classmethod
    def from_dict(cls, d: dict, dims: Sequence[FeatureDimension]) -> "CandidateRecord":
        fv = d.get("feature_vector")
        return cls(
            id=d["id"], island_id=d["island_id"], generation=d["generation"],
            program_text=d["program"], hypothesis=d.get("hypothesis", {}),
            metrics=MetricSet.from_dict(d["metrics"]) if d.get("metrics") else None,
            analysis=d.get("analysis", {}),
            feature_vector=FeatureVector.from_key(fv, dims) if fv else None,
            parent_id=d.get("parent_id"), cousin_ids=tuple(d.get("cousin_ids", ())),
            error=d.get("error", ""),
        )


@dataclass(frozen=True)
class InsertResult:
    accepted: bool
    replaced: str | None = None
    key: str | None = None


class EvolutionaryDatabase:
    """Cells hold the best record id per feature vector; ``records`` keeps everything."""

    def __init__(self, dimensions: Sequence[FeatureDimension]):
        self.dimensions = list(dimensions)
        self.cells: dict[str, str] = {}
        self.records: dict[str, CandidateRecord] = {}
        self.islands: list = []

    def __len__(self) -> int:
        return len(self.records)

    @property
    def total_cells(self) -> int:
        return math.prod(d.size for d in self.dimensions)

    def dimension(self, name: str) -> FeatureDimension:
        name = DIM_ALIASES.get(name, name)
        for d in self.dimensions:
            if d.name == name:
                return d
        raise UnknownDimension(f"{name!r}; dimensions are {[d.name for d in self.dimensions]}")

    def compute_feature_vector(self, record: CandidateRecord) -> FeatureVector:
        return feature_vector_from(record.metrics, record.program.tags, self.dimensions)

    def occupant(self, key: str) -> CandidateRecord | None:
        rid = self.cells.get(key)
        return self.records[rid] if rid is not None else None

    def is_elite(self, record_id: str) -> bool:
        return record_id in self._elite_ids()

    def _elite_ids(self) -> set[str]:
        return set(self.cells.values())

    def elites(self) -> list[CandidateRecord]:
        return [self.records[rid] for rid in self.cells.values()]


def compute_feature_vector(db: EvolutionaryDatabase, record: CandidateRecord) -> FeatureVector:
    return db.compute_feature_vector(record)


def insert_candidate(db: EvolutionaryDatabase, record: CandidateRecord) -> InsertResult:
    """Archive the record and place it in its cell if it beats the incumbent (ties keep the incumbent)."""
    if record.id in db.records:
        raise ValueError(f"duplicate candidate id {record.id}")
    db.records[record.id] = record
    if record.failed or record.feature_vector is None:
        return InsertResult(False)
    key = record.feature_vector.key
    incumbent = db.occupant(key)
    if incumbent is None:
        db.cells[key] = record.id
        return InsertResult(True, None, key)
    if record.score > incumbent.score:
        db.cells[key] = record.id
        return InsertResult(True, incumbent.id, key)
    return InsertResult(False, None, key)


def map_stats(db: EvolutionaryDatabase) -> dict:
    total = db.total_cells
    elites = db.elites()
    per_island = {}
    elite_ids = {r.id for r in elites}
    for isl in db.islands:
        filled = sum(1 for rid in isl.population if rid in elite_ids)
        per_island[isl.id] = filled / total
    return {
        "filled": len(elites),
        "total_cells": total,
        "coverage": len(elites) / total,
        "coverage_per_island": per_island,
        "best_score": max((r.score for r in elites), default=None),
        "qd_sum": math.fsum(r.score for r in elites),
    }


COLOR_METRICS = METRIC_NAMES + ("score",)


def export_projection(db: EvolutionaryDatabase, dim_a: str, dim_b: str,
                      color_metric: str) -> list[tuple]:
    """Max of ``color_metric`` over all cells projecting onto each (a, b) pair.

    Returns rows ``(label_a, label_b, value)``; unpopulated pairs carry ``EMPTY``.
    An empty database yields no rows.
    """
    da, db_ = db.dimension(dim_a), db.dimension(dim_b)
    if da.name == db_.name:
        raise ValueError("projection dimensions must be distinct")
    if color_metric not in COLOR_METRICS:
        raise KeyError(f"unknown metric {color_metric!r}; valid: {list(COLOR_METRICS)}")
    if not db.cells:
        return []
    ia, ib = db.dimensions.index(da), db.dimensions.index(db_)
    best: dict[tuple, float] = {}
    for key, rid in db.cells.items():
        fv = FeatureVector.from_key(key, db.dimensions)
        value = db.records[rid].metrics.get(color_metric) if color_metric != "score" else db.records[rid].score
        k = (fv.values[ia], fv.values[ib])
        if k not in best or value > best[k]:
            best[k] = value
    return [(a, b, best.get((a, b), EMPTY)) for a in da.labels() for b in db_.labels()]


def write_projection_csv(rows: list[tuple], dim_a: str, dim_b: str, color_metric: str,
                         path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([dim_a, dim_b, color_metric])
        for a, b, v in rows:
            w.writerow([a, b, v if v == EMPTY else repr(float(v))])
