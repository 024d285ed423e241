"""Performance ratios and the evolutionary fitness (SR + IR + MDD).

All ratios use a zero risk-free rate by default and are annualized by sqrt(252).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

TRADING_DAYS = 252
ANNUALIZE = math.sqrt(TRADING_DAYS)
METRIC_NAMES = ("sharpe", "sortino", "information_ratio", "max_drawdown", "cumulative_return",
                "num_transactions")


class MetricError(ValueError):
    pass


class DegenerateSeries(MetricError):
    pass


class NoDownside(MetricError):
    pass


class ZeroTrackingError(MetricError):
    pass


class InvalidMetrics(MetricError):
    pass


@dataclass(frozen=True)
class MetricSet:
    sharpe: float
    sortino: float
    information_ratio: float
    max_drawdown: float
    cumulative_return: float
    num_transactions: int
    valid: bool = True
    reason: str = ""

    def to_dict(self) -> dict:
        # undefined values become None so the result is strict JSON
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSet":
        return cls(**{k: (math.nan if v is None else v) for k, v in d.items()})

    def get(self, name: str) -> float:
        if name == "score":
            return combined_score(self) if self.valid else -math.inf
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return float(getattr(self, name))


def _returns(x) -> np.ndarray:
    r = np.asarray(x, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise DegenerateSeries("need at least two returns")
    if not np.all(np.isfinite(r)):
        raise DegenerateSeries("non-finite return")
    return r


def sharpe_ratio(daily_returns, rf_daily: float = 0.0) -> float:
    r = _returns(daily_returns) - rf_daily
    sd = r.std(ddof=1)
    if sd == 0:
        raise DegenerateSeries("zero return volatility")
    return float(r.mean() / sd * ANNUALIZE)


def sortino_ratio(daily_returns, rf_daily: float = 0.0) -> float:
    """Mean excess return over the root-mean-square of the negative returns."""
    r = _returns(daily_returns) - rf_daily
    neg = r[r < 0]
    if len(neg) == 0:
        raise NoDownside("no negative returns")
    dd = math.sqrt(float(np.mean(neg * neg)))
    if dd == 0:
        raise NoDownside("downside deviation underflows to zero")
    return float(r.mean() / dd * ANNUALIZE)


def information_ratio(daily_returns, benchmark_returns) -> float:
    r = _returns(daily_returns)
    b = _returns(benchmark_returns)
    if len(r) != len(b):
        raise ValueError(f"length mismatch: {len(r)} returns vs {len(b)} benchmark returns")
    active = r - b
    sd = active.std(ddof=1)
    if sd == 0:
        raise ZeroTrackingError("active returns have zero tracking error")
    return float(active.mean() / sd * ANNUALIZE)


def max_drawdown(equity_curve) -> float:
    e = np.asarray(equity_curve, dtype=float)
    if len(e) == 0:
        raise ValueError("empty equity curve")
    if np.any(e <= 0):
        raise DegenerateSeries("equity must stay positive")
    worst, peak = 0.0, e[0]
    for v in e:
        if v > peak:
            peak = v
        dd = (v - peak) / peak
        if dd < worst:
            worst = dd
    return float(worst)


def cumulative_return(equity_curve) -> float:
    e = np.asarray(equity_curve, dtype=float)
    return float(e[-1] / e[0] - 1.0)


def combined_score(metric_set: MetricSet) -> float:
    if not metric_set.valid:
        raise InvalidMetrics(metric_set.reason or "metrics are invalid")
    return metric_set.sharpe + metric_set.information_ratio + metric_set.max_drawdown


def score_or_fail(metric_set: MetricSet | None) -> float:
    """Fitness used for ranking; failed or invalid candidates rank last."""
    if metric_set is None or not metric_set.valid:
        return -math.inf
    return combined_score(metric_set)


def compute_metrics(equity_curve, num_transactions: int, benchmark_returns) -> MetricSet:
    """All metrics at once; any undefined component yields ``valid=False`` rather than a substitute."""
    e = np.asarray(equity_curve, dtype=float)
    values = {"sharpe": math.nan, "sortino": math.nan, "information_ratio": math.nan,
              "max_drawdown": math.nan, "cumulative_return": math.nan}
    problems = []
    try:
        values["max_drawdown"] = max_drawdown(e)
        values["cumulative_return"] = cumulative_return(e)
    except MetricError as exc:
        problems.append(f"max_drawdown: {exc}")
    r = e[1:] / e[:-1] - 1.0 if len(e) > 1 and np.all(e > 0) else np.array([])
    for name, fn, args in (("sharpe", sharpe_ratio, (r,)), ("sortino", sortino_ratio, (r,)),
                           ("information_ratio", information_ratio, (r, benchmark_returns))):
        try:
            values[name] = fn(*args)
        except MetricError as exc:
            problems.append(f"{name}: {exc}")
    return MetricSet(num_transactions=int(num_transactions), valid=not problems,
                     reason="; ".join(problems), **values)


def score_report(report, benchmark_returns) -> MetricSet:
    """Attach and return the MetricSet for a BacktestReport."""
    report.metrics = compute_metrics(report.equity_curve, report.num_transactions, benchmark_returns)
    return report.metrics
