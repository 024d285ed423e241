"""Daily-bar portfolio simulation with per-share commission and volume-share slippage.

Conventions:
  * ``equity[t]`` is marked at close ``t`` before that day's close-fills, so
    ``equity[0] == initial_capital`` and a fill on day ``t`` shows up from ``t + 1``.
  * No orders are generated on the last bar of a view.
  * Positions are whole shares/contracts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsl import EvaluationError, Program, compute_schedule
from .market_data import Bar, Universe


class CandidateFailure(RuntimeError):
    """A program could not be simulated; the candidate is scored as failed."""

    def __init__(self, message: str, cause: Exception | None = None):
        self.cause = cause
        super().__init__(message)


@dataclass(frozen=True)
class CostModel:
    per_share_cost: float = 0.0075
    min_trade_cost: float = 1.00
    slippage_impact: float = 0.1
    volume_limit: float = 0.025
    commission_mode: str = "per_share"  # or "percent"
    percent_rate: float = 0.00075

    def __post_init__(self):
        for name in ("per_share_cost", "min_trade_cost", "slippage_impact", "percent_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.volume_limit <= 1:
            raise ValueError("volume_limit must be in (0, 1]")
        if self.commission_mode not in ("per_share", "percent"):
            raise ValueError(f"unknown commission_mode {self.commission_mode!r}")

    @classmethod
    def zero(cls) -> "CostModel":
        return cls(per_share_cost=0.0, min_trade_cost=0.0, slippage_impact=0.0, volume_limit=1.0)

    def commission(self, quantity: int, price: float, point_value: float = 1.0) -> float:
        if quantity == 0:
            return 0.0
        if self.commission_mode == "percent":
            return self.percent_rate * abs(quantity) * price * point_value
        return max(abs(quantity) * self.per_share_cost, self.min_trade_cost)


@dataclass(frozen=True)
class Fill:
    date: str
    bar_index: int
    symbol: str
    quantity: int
    fill_price: float
    commission: float
    at_open: bool = False


@dataclass
class BacktestReport:
    dates: np.ndarray
    equity_curve: np.ndarray
    fills: list[Fill]
    metrics: object | None = None  # MetricSet, filled by the metrics module
    final_positions: dict[str, int] = field(default_factory=dict)

    @property
    def daily_returns(self) -> np.ndarray:
        return self.equity_curve[1:] / self.equity_curve[:-1] - 1.0

    @property
    def num_transactions(self) -> int:
        return len(self.fills)

    @property
    def cumulative_return(self) -> float:
        return float(self.equity_curve[-1] / self.equity_curve[0] - 1.0)


def slippage_fill(order_qty: int, bar: Bar, cost_model: CostModel, price: float | None = None):
    """Cap an order at ``volume_limit`` of the bar's volume and price it quadratically in volume share.

    Returns ``(filled_qty, fill_price)``; a zero-volume bar fills nothing.
    """
    ref = bar.close if price is None else price
    if order_qty == 0 or bar.volume <= 0:
        return 0, ref
    cap = math.floor(cost_model.volume_limit * bar.volume + 1e-9)
    filled = int(math.copysign(min(abs(order_qty), cap), order_qty))
    if filled == 0:
        return 0, ref
    share = abs(filled) / bar.volume
    sign = 1 if filled > 0 else -1
    return filled, ref * (1.0 + sign * cost_model.slippage_impact * share * share)


def _affordable(qty: int, bar: Bar, ref: float, cash: float, pv: float, cm: CostModel) -> int:
    def cost(q):
        _, px = slippage_fill(q, bar, cm, ref)
        return q * px * pv + cm.commission(q, px, pv)

    if qty <= 0 or cost(qty) <= cash:
        return qty
    lo, hi = 0, qty  # cost(lo) <= cash < cost(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cost(mid) <= cash:
            lo = mid
        else:
            hi = mid
    return lo


def run_backtest(program: Program, view: Universe, cost_model: CostModel | None = None,
                 initial_capital: float = 1_000_000.0, allow_short: bool = False,
                 fill_mode: str = "close") -> BacktestReport:
    if len(view) == 0:
        raise ValueError("empty view")
    if initial_capital <= 0:
        raise ValueError("initial_capital must be positive")
    if fill_mode not in ("close", "next_open"):
        raise ValueError(f"unknown fill_mode {fill_mode!r}")
    cm = cost_model or CostModel()
    try:
        sched = compute_schedule(program, view, allow_short)
    except EvaluationError as exc:
        raise CandidateFailure(f"evaluation error in {exc.path}: {exc}", exc) from exc

    symbols = sched.symbols
    T, n = len(view), len(symbols)
    series = [view.series[s] for s in symbols]
    pv = np.array([ps.point_value for ps in series])
    close = np.column_stack([ps.close for ps in series])
    pos = np.zeros(n, dtype=np.int64)
    cash = float(initial_capital)
    equity = np.empty(T)
    fills: list[Fill] = []
    pending: np.ndarray | None = None

    def execute(orders: np.ndarray, t: int, at_open: bool):
        nonlocal cash
        # sells first so their proceeds fund the buys
        for j in sorted(range(n), key=lambda j: (orders[j] > 0, j)):
            q = int(orders[j])
            if q == 0:
                continue
            ps = series[j]
            bar = ps.bar(t)
            ref = bar.open if at_open else bar.close
            if q > 0 and not allow_short:
                q = _affordable(q, bar, ref, cash, pv[j], cm)
            filled, px = slippage_fill(q, bar, cm, ref)
            if filled == 0:
                continue
            comm = cm.commission(filled, px, pv[j])
            cash -= filled * px * pv[j] + comm
            pos[j] += filled
            fills.append(Fill(str(view.calendar[t]), t, symbols[j], filled, px, comm, at_open))

    for t in range(T):
        if pending is not None:
            execute(pending, t, at_open=True)
            pending = None
        equity[t] = cash + float(np.sum(pos * close[t] * pv))
        if t == T - 1 or not sched.rebalance[t]:
            continue
        value = equity[t]
        target = np.trunc(sched.weights[t] * value / (close[t] * pv)).astype(np.int64)
        orders = target - pos
        if not orders.any():
            continue
        if fill_mode == "close":
            execute(orders, t, at_open=False)
        else:
            pending = orders

    return BacktestReport(view.calendar.copy(), equity, fills,
                          final_positions={s: int(q) for s, q in zip(symbols, pos)})


def replay_fills(fills: list[Fill], view: Universe, cost_model: CostModel,
                 initial_capital: float) -> np.ndarray:
    """Equity curve for a fixed fill sequence with commissions re-priced under ``cost_model``."""
    symbols = view.symbols
    idx = {s: j for j, s in enumerate(symbols)}
    pv = np.array([view.series[s].point_value for s in symbols])
    close = view.close_matrix()
    by_bar: dict[int, list[Fill]] = {}
    for f in fills:
        by_bar.setdefault(f.bar_index, []).append(f)
    pos = np.zeros(len(symbols), dtype=np.int64)
    cash = float(initial_capital)
    equity = np.empty(len(view))

    def apply(f: Fill):
        nonlocal cash
        j = idx[f.symbol]
        cash -= f.quantity * f.fill_price * pv[j] + cost_model.commission(f.quantity, f.fill_price, pv[j])
        pos[j] += f.quantity

    for t in range(len(view)):
        day = by_bar.get(t, [])
        for f in day:
            if f.at_open:
                apply(f)
        equity[t] = cash + float(np.sum(pos * close[t] * pv))
        for f in day:
            if not f.at_open:
                apply(f)
    return equity


def write_equity_csv(report: BacktestReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "equity", "return"])
        rets = np.concatenate([[0.0], report.daily_returns])
        for d, e, r in zip(report.dates, report.equity_curve, rets):
            w.writerow([str(d), repr(float(e)), repr(float(r))])


def write_report_json(report: BacktestReport, path: str | Path) -> None:
    metrics = report.metrics.to_dict() if report.metrics is not None else None
    doc = {"metrics": metrics, "num_transactions": report.num_transactions,
           "fills": [asdict(f) for f in report.fills]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
