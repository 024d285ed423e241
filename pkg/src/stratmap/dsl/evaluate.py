"""Turn a Program into per-day target weights over a universe view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..market_data import Universe
from .errors import EvaluationError
from .indicators import indicator_arrays, rolling_vol
from .program import (Arith, Bool, Compare, Expr, Field, If, Logic, Neg, Not, Num, Program, Ref,
                      refs)

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class TargetSchedule:
    symbols: list[str]
    weights: np.ndarray    # (days, assets)
    rebalance: np.ndarray  # bool (days,)
    warmup: np.ndarray     # bool (days, assets)


def calendar_fields(dates: np.ndarray) -> dict[str, np.ndarray]:
    days = dates.astype("datetime64[D]").astype(np.int64)
    months = dates.astype("datetime64[M]")
    return {
        "day_of_week": ((days + 3) % 7).astype(float),  # Monday = 0
        "day_of_month": ((dates.astype("datetime64[D]") - months).astype(np.int64) + 1).astype(float),
        "month": (months.astype(np.int64) % 12 + 1).astype(float),
    }


def _eval(node: Expr, env: dict, live: np.ndarray, path: str):
    if isinstance(node, Num):
        return np.full(len(live), node.value)
    if isinstance(node, Bool):
        return np.full(len(live), node.value)
    if isinstance(node, Ref):
        return env[(node.name, node.output)]
    if isinstance(node, Field):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env, live, path + ".operand")
    if isinstance(node, Not):
        return ~_eval(node.operand, env, live, path + ".operand")
    if isinstance(node, If):
        c = _eval(node.cond, env, live, path + ".cond")
        return np.where(c, _eval(node.then, env, live, path + ".then"),
                        _eval(node.other, env, live, path + ".else"))
    left = _eval(node.left, env, live, path + ".left")
    right = _eval(node.right, env, live, path + ".right")
    if isinstance(node, Logic):
        return (left & right) if node.op == "and" else (left | right)
    if isinstance(node, Compare):
        with np.errstate(invalid="ignore"):
            return {
                "<": np.less, "<=": np.less_equal, ">": np.greater,
                ">=": np.greater_equal, "==": np.equal, "!=": np.not_equal,
            }[node.op](left, right)
    if isinstance(node, Arith):
        if node.op == "/":
            bad = live & (right == 0)
            if bad.any():
                raise EvaluationError(f"division by zero on day {int(np.argmax(bad))}", path)
            with np.errstate(divide="ignore", invalid="ignore"):
                return left / right
        with np.errstate(over="ignore", invalid="ignore"):
            return {"+": np.add, "-": np.subtract, "*": np.multiply}[node.op](left, right)
    raise TypeError(node)


def _rebalance_mask(program: Program, dates: np.ndarray) -> np.ndarray:
    n = len(dates)
    kind = program.rebalance.kind
    if kind == "daily":
        return np.ones(n, dtype=bool)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    if kind == "once":
        mask[0] = True
    elif kind == "every_n_days":
        mask[:: program.rebalance.n] = True
    else:  # monthly: first trading day of each month
        months = dates.astype("datetime64[M]")
        mask[0] = True
        mask[1:] = months[1:] != months[:-1]
    return mask


def compute_schedule(program: Program, view: Universe, allow_short: bool = False) -> TargetSchedule:
    """Targets for every day of ``view``; each row uses only bars up to that day."""
    symbols = view.symbols
    T, n = len(view), len(symbols)
    used = program.referenced()
    cal = calendar_fields(view.calendar)
    rules = program.rules()
    shorting = allow_short and program.short_entry is not None

    positions = np.zeros((T, n))   # -1 / 0 / +1
    warm = np.zeros((T, n), dtype=bool)
    strength = np.ones((T, n))
    vols = np.ones((T, n))

    for j, sym in enumerate(symbols):
        ps = view.series[sym]
        env: dict = {f: getattr(ps, f).astype(float) for f in ("close", "open", "high", "low", "volume")}
        env.update(cal)
        warmup = np.zeros(T, dtype=bool)
        for name, spec in program.indicators:
            if name not in used:
                continue
            for output, arr in indicator_arrays(spec, ps, view.series).items():
                env[(name, output)] = arr
                warmup |= np.isnan(arr)
        if program.sizing.kind == "inverse_volatility":
            vols[:, j] = rolling_vol(ps.close, program.sizing.lookback)
            warmup |= np.isnan(vols[:, j])
        live = ~warmup
        signals = {key: _eval(expr, env, live, key) for key, expr in rules.items()}
        if "sizing" in signals:
            s = np.asarray(signals["sizing"], dtype=float)
            if not np.all(np.isfinite(s[live])):
                raise EvaluationError("non-finite sizing strength", "sizing")
            strength[:, j] = np.where(live, s, 0.0)
        warm[:, j] = warmup
        positions[:, j] = _run_states(program, signals, live, ps.close, shorting)

    weights = np.zeros((T, n))
    for t in range(T):
        weights[t] = _size_row(program, positions[t], warm[t], strength[t], vols[t], view, t)
    if program.max_weight is not None:
        weights = np.sign(weights) * np.minimum(np.abs(weights), program.max_weight)
    if not allow_short:
        weights = np.maximum(weights, 0.0)
    return TargetSchedule(symbols, weights, _rebalance_mask(program, view.calendar), warm)


def _run_states(program: Program, sig: dict, live: np.ndarray, close: np.ndarray,
                shorting: bool) -> np.ndarray:
    T = len(live)
    entry, exit_ = sig["entry"], sig["exit"]
    s_entry = sig.get("short_entry") if shorting else None
    s_exit = sig.get("short_exit") if shorting else None
    stop = program.trailing_stop
    out = np.zeros(T)
    state, extreme = 0, 0.0
    for t in range(T):
        if not live[t]:
            state = 0
        elif state == 1:
            extreme = max(extreme, close[t])
            if exit_[t] or (stop is not None and close[t] <= extreme * (1.0 - stop)):
                state = 0
        elif state == -1:
            extreme = min(extreme, close[t])
            hit = stop is not None and close[t] >= extreme * (1.0 + stop)
            if (s_exit is not None and s_exit[t]) or hit:
                state = 0
        elif entry[t]:
            state, extreme = 1, close[t]
        elif s_entry is not None and s_entry[t]:
            state, extreme = -1, close[t]
        out[t] = state
    return out


def _size_row(program: Program, pos: np.ndarray, warm: np.ndarray, strength: np.ndarray,
              vol: np.ndarray, view: Universe, t: int) -> np.ndarray:
    active = pos != 0
    w = np.zeros(len(pos))
    if not active.any():
        if program.fallback == "equal_weight" and (~warm).any():
            w[~warm] = 1.0 / (~warm).sum()
        return w
    kind = program.sizing.kind
    if kind == "equal_weight":
        w[active] = 1.0 / active.sum()
    elif kind == "fixed_fraction":
        w[active] = min(program.sizing.fraction, 1.0 / active.sum())
    elif kind == "inverse_volatility":
        v = vol[active].copy()
        if (v > 0).any():
            v[v == 0] = v[v > 0].mean()
            inv = 1.0 / v
            w[active] = inv / inv.sum()
        else:
            w[active] = 1.0 / active.sum()
    elif kind == "signal_proportional":
        s = np.maximum(strength[active], 0.0)
        if s.sum() > 0:
            w[active] = s / s.sum()
    elif kind == "market_cap":
        shares = dict(program.sizing.shares)
        caps = np.array([shares.get(sym, 0.0) * view.series[sym].close[t]
                         for sym in np.array(view.symbols)[active]])
        if caps.sum() > 0:
            w[active] = caps / caps.sum()
    return w * pos


def evaluate_targets(program: Program, view: Universe, date_index: int,
                     allow_short: bool = False) -> dict[str, float]:
    """Target weight per symbol on ``date_index``, computed from bars up to that day only."""
    if not 0 <= date_index < len(view):
        raise IndexError(date_index)
    sched = compute_schedule(program, view.head(date_index + 1), allow_short)
    return {sym: float(w) for sym, w in zip(sched.symbols, sched.weights[-1])}


__all__ = ["TargetSchedule", "compute_schedule", "evaluate_targets", "calendar_fields", "refs"]
