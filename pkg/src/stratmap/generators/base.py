from __future__ import annotations

import hashlib
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from ..dsl import Program
from ..dsl.program import CALENDAR_FIELDS, fields_used
from ..feature_map import EQUITY_TAXONOMY, CandidateRecord
from ..market_data import Universe

HYPOTHESIS_FIELDS = ("hypothesis", "rationale", "objectives", "expected_insights",
                     "risks_limitations", "experimentation_ideas")

# indicator kind -> category it signals
KIND_CATEGORY = {
    "sma": "momentum_trend",
    "ema": "momentum_trend",
    "macd_hist": "momentum_trend",
    "momentum": "momentum_trend",
    "rsi": "mean_reversion",
    "bollinger_z": "mean_reversion",
    "stochastic_kdj": "mean_reversion",
    "rolling_vol": "volatility",
    "highest": "breakout_pattern",
    "lowest": "breakout_pattern",
    "rel_momentum": "correlation_pairs",
}
VOLUME_CATEGORY = "volume_liquidity"
CALENDAR_CATEGORY = "seasonal_calendar"
RISK_CATEGORY = "risk_allocation"


class GenerationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    hypothesis: str
    rationale: str
    objectives: str
    expected_insights: str
    risks_limitations: str
    experimentation_ideas: str

    def __post_init__(self):
        empty = [f for f in HYPOTHESIS_FIELDS if not str(getattr(self, f)).strip()]
        if empty:
            raise ValueError(f"hypothesis fields must be non-empty: {empty}")

    def to_dict(self) -> dict:
        return asdict(self)


def normalize_text(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().lower())


@dataclass(frozen=True)
class Insight:
    island_id: int
    generation: int
    text: str
    source_candidate_id: str | None
    content_hash: str = ""

    def __post_init__(self):
        digest = hashlib.sha256(normalize_text(self.text).encode()).hexdigest()
        if self.content_hash and self.content_hash != digest:
            raise ValueError("insight hash does not match its text")
        object.__setattr__(self, "content_hash", digest)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Insight":
        return cls(**d)


@dataclass
class GenerationContext:
    parent: CandidateRecord
    cousins: list[CandidateRecord]
    insights: list[Insight]
    data_schema_prompt: str
    taxonomy: tuple[str, ...]
    island_id: int = 0
    generation: int = 0
    # raises CandidateFailure when a program cannot be backtested; used by repair loops
    check: Callable[[Program], object] | None = None


@dataclass
class GeneratorOutcome:
    hypothesis: Hypothesis
    program: Program
    repair_attempts: int = 0
    raw_transcripts: list = field(default_factory=list)
    edit: str = ""
    check_result: object | None = None


class Generator(Protocol):
    def propose(self, context: GenerationContext, rng: np.random.Generator) -> GeneratorOutcome: ...

    def analyze(self, candidate: CandidateRecord, parent: CandidateRecord | None,
                outcome: GeneratorOutcome | None = None) -> tuple[dict, str]: ...

    def consolidate(self, insights: list[Insight]) -> str | None: ...


def categorize(program: Program, taxonomy: Sequence[str],
               table: Mapping[str, str] | None = None) -> tuple[str, ...]:
    """Category tags implied by the program's building blocks, in taxonomy order."""
    table = KIND_CATEGORY if table is None else table
    found = set()
    used = program.referenced()
    for name, spec in program.indicators:
        if name not in used:
            continue
        if spec.source == "volume":
            found.add(VOLUME_CATEGORY)  # a volume average says nothing about price trend
        elif spec.kind in table:
            found.add(table[spec.kind])
    fields = set()
    for expr in program.rules().values():
        fields |= fields_used(expr)
    if "volume" in fields:
        found.add(VOLUME_CATEGORY)
    if fields & set(CALENDAR_FIELDS):
        found.add(CALENDAR_CATEGORY)
    if program.sizing.kind in ("inverse_volatility", "market_cap") or program.max_weight is not None:
        found.add(RISK_CATEGORY)
    return tuple(t for t in taxonomy if t in found)


def data_schema_prompt(universe: Universe) -> str:
    lines = ["DATA STRUCTURE: daily OHLCV bars, one row per trading day, columns "
             "date (YYYY-MM-DD), open, high, low, close, volume."]
    if len(universe):
        lines.append(f"Calendar: {len(universe)} shared trading days from "
                     f"{universe.calendar[0]} to {universe.calendar[-1]}.")
    lines.append("ASSETS:")
    for sym, ps in universe.series.items():
        extra = f", point value {ps.point_value:g}" if ps.asset_class == "futures" else ""
        lines.append(f"- {sym} ({ps.asset_class}{extra})")
    lines.append("Rules see only bars up to and including the current day.")
    return "\n".join(lines)


def curate_insights(repository: list[Insight], n_max: int = 200,
                    consolidate: Callable[[list[Insight]], str | None] | None = None) -> list[Insight]:
    """Drop exact duplicates (first occurrence wins), keep the ``n_max`` most recent.

    With ``consolidate``, the older half is replaced by one summary insight; a
    failing consolidator leaves the de-duplicated list.
    """
    seen, deduped = set(), []
    for ins in repository:
        if ins.content_hash in seen:
            continue
        seen.add(ins.content_hash)
        deduped.append(ins)
    deduped = deduped[-n_max:] if n_max > 0 else []
    # only consolidate a repository that is more than half full, so curation is a fixed point
    if consolidate is None or len(deduped) < 4 or len(deduped) <= (n_max + 1) // 2 + 1:
        return deduped
    cut = len(deduped) // 2
    try:
        summary = consolidate(deduped[:cut])
    except Exception:  # noqa: BLE001 - consolidation is best effort
        return deduped
    if not summary or not summary.strip():
        return deduped
    last = deduped[cut - 1]
    merged = Insight(last.island_id, last.generation, summary.strip(), None)
    if merged.content_hash in {i.content_hash for i in deduped[cut:]}:
        return deduped[cut:]
    return [merged] + deduped[cut:]


def score_delta(child: CandidateRecord, parent: CandidateRecord | None) -> float:
    if parent is None:
        return math.nan
    a, b = child.score, parent.score
    if a == b:
        return 0.0
    return a - b


def verdict_for(delta: float) -> str:
    if math.isnan(delta) or delta == 0:
        return "inconclusive"
    return "supported" if delta > 0 else "refuted"


ANALYSIS_METRICS = ("sharpe", "sortino", "information_ratio", "max_drawdown",
                    "cumulative_return", "num_transactions")


def template_analysis(candidate: CandidateRecord, parent: CandidateRecord | None,
                      edit: str = "") -> tuple[dict, str]:
    """Quantitative summary against the parent; returns (analysis, insight text)."""
    delta = score_delta(candidate, parent)
    verdict = verdict_for(delta)
    deltas = {}
    if parent is not None and candidate.metrics is not None and parent.metrics is not None:
        for k in ANALYSIS_METRICS:
            a, b = candidate.metrics.get(k), parent.metrics.get(k)
            deltas[k] = a - b if math.isfinite(a) and math.isfinite(b) else None
    label = edit or "edit"
    if candidate.error:
        summary = f"{label} failed: {candidate.error}"
    else:
        shown = "n/a" if math.isnan(delta) else f"{delta:+.4f}"
        summary = f"{label} changed combined score by {shown} ({verdict})"
    analysis = {"mode": "template", "verdict": verdict,
                "score_delta": delta if math.isfinite(delta) else None,
                "metric_deltas": deltas, "summary": summary}
    return analysis, summary


def describe_record(rec: CandidateRecord | None) -> str:
    """Plain-text view of a record for prompts."""
    if rec is None:
        return "(none)"
    lines = [f"id {rec.id}, generation {rec.generation}", rec.program_text.rstrip()]
    if rec.hypothesis:
        lines.append("hypothesis: " + str(rec.hypothesis.get("hypothesis", "")))
    if rec.error:
        lines.append(f"failed: {rec.error}")
    elif rec.metrics is not None:
        m = rec.metrics
        lines.append(
            f"sharpe {m.sharpe:.3f}, sortino {m.sortino:.3f}, information_ratio {m.information_ratio:.3f}, "
            f"max_drawdown {m.max_drawdown:.3f}, cumulative_return {m.cumulative_return:.3f}, "
            f"trades {m.num_transactions}, score {rec.score:.3f}")
    summary = rec.analysis.get("summary") or rec.analysis.get("reasoning") if rec.analysis else None
    if summary:
        lines.append(f"analysis: {summary}")
    return "\n".join(lines)


__all__ = [
    "EQUITY_TAXONOMY", "HYPOTHESIS_FIELDS", "KIND_CATEGORY", "GenerationFailure", "Hypothesis",
    "Insight", "GenerationContext", "GeneratorOutcome", "Generator", "categorize",
    "data_schema_prompt", "curate_insights", "score_delta", "verdict_for", "template_analysis",
    "describe_record",
]
