"""Causal indicator arrays. Index t of every output depends only on bars 0..t.

Warmup positions are NaN in the array form.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..market_data import PriceSeries
from .program import IndicatorSpec


class _Warmup:
    def __repr__(self):
        return "Warmup"

    def __bool__(self):
        return False


Warmup = _Warmup()


def rolling_mean(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) >= n:
        out[n - 1:] = sliding_window_view(x, n).mean(axis=1)
    return out


def rolling_std(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if n >= 2 and len(x) >= n:
        out[n - 1:] = sliding_window_view(x, n).std(axis=1, ddof=1)
    return out


def rolling_max(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) >= n:
        out[n - 1:] = sliding_window_view(x, n).max(axis=1)
    return out


def rolling_min(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) >= n:
        out[n - 1:] = sliding_window_view(x, n).min(axis=1)
    return out


def ewm_mean(x: np.ndarray, span: int) -> np.ndarray:
    # same weighting as pandas ewm(span=..., adjust=True), seeded at the first bar
    q = 1.0 - 2.0 / (span + 1.0)
    out = np.empty(len(x))
    num = den = 0.0
    for i, v in enumerate(x):
        num = v + q * num
        den = 1.0 + q * den
        out[i] = num / den
    return out


def _shifted_ratio(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) > n:
        out[n:] = x[n:] / x[:-n] - 1.0
    return out


def rsi(close: np.ndarray, n: int) -> np.ndarray:
    """Simple-moving-average RSI; 0/0 (no movement at all) is defined as 50."""
    out = np.full(len(close), np.nan)
    if len(close) <= n:
        return out
    delta = np.diff(close)
    gain = rolling_mean(np.where(delta > 0, delta, 0.0), n)
    loss = rolling_mean(np.where(delta < 0, -delta, 0.0), n)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = 100.0 - 100.0 / (1.0 + gain / loss)
    value = np.where(loss == 0, np.where(gain == 0, 50.0, 100.0), value)
    out[1:] = value
    out[: n] = np.nan
    return out


def macd_hist(close: np.ndarray, fast: int, slow: int, signal: int) -> np.ndarray:
    line = ewm_mean(close, fast) - ewm_mean(close, slow)
    hist = line - ewm_mean(line, signal)
    hist[: max(fast, slow) + signal - 2] = np.nan
    return hist


def bollinger_z(x: np.ndarray, n: int) -> np.ndarray:
    mean = rolling_mean(x, n)
    std = rolling_std(x, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x - mean) / std
    return np.where(std == 0, 0.0, z)


def stochastic_kdj(high, low, close, k: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ll = rolling_min(low, k)
    hh = rolling_max(high, k)
    rng = hh - ll
    with np.errstate(divide="ignore", invalid="ignore"):
        k_pct = 100.0 * (close - ll) / rng
    k_pct = np.where(rng == 0, 50.0, k_pct)
    k_pct[: k - 1] = np.nan
    d_pct = np.full(len(close), np.nan)
    if len(close) >= k + d - 1:
        d_pct[k - 1:] = rolling_mean(k_pct[k - 1:], d)
    j_pct = 3.0 * k_pct - 2.0 * d_pct
    k_pct = np.where(np.isnan(d_pct), np.nan, k_pct)
    return k_pct, d_pct, j_pct


def rolling_vol(x: np.ndarray, n: int) -> np.ndarray:
    """Sample std of the last ``n`` simple returns (daily units)."""
    out = np.full(len(x), np.nan)
    if len(x) > n:
        out[1:] = rolling_std(x[1:] / x[:-1] - 1.0, n)
    return out


def _source(series: PriceSeries, source: str) -> np.ndarray:
    arr = getattr(series, source)
    return arr.astype(float) if source == "volume" else arr


def indicator_arrays(spec: IndicatorSpec, series: PriceSeries,
                     universe: Mapping[str, PriceSeries] | None = None) -> dict[str | None, np.ndarray]:
    """Full causal arrays keyed by output name (``None`` for single-output kinds)."""
    x = _source(series, spec.source)
    p = spec.params
    kind = spec.kind
    if kind == "sma":
        return {None: rolling_mean(x, p[0])}
    if kind == "ema":
        out = ewm_mean(x, p[0])
        out[: p[0] - 1] = np.nan
        return {None: out}
    if kind == "rsi":
        return {None: rsi(x, p[0])}
    if kind == "macd_hist":
        return {None: macd_hist(x, *p)}
    if kind == "bollinger_z":
        return {None: bollinger_z(x, p[0])}
    if kind == "stochastic_kdj":
        k, d, j = stochastic_kdj(series.high, series.low, series.close, *p)
        return {"k": k, "d": d, "j": j}
    if kind == "rolling_vol":
        return {None: rolling_vol(x, p[0])}
    if kind == "momentum":
        return {None: _shifted_ratio(x, p[0])}
    if kind == "highest":
        return {None: rolling_max(x, p[0])}
    if kind == "lowest":
        return {None: rolling_min(x, p[0])}
    if kind == "rel_momentum":
        peers = list((universe or {series.symbol: series}).values())
        mean = np.mean([_shifted_ratio(_source(ps, spec.source), p[0]) for ps in peers], axis=0)
        return {None: _shifted_ratio(x, p[0]) - mean}
    raise KeyError(kind)


def compute_indicator(spec: IndicatorSpec, series: PriceSeries, date_index: int,
                      universe: Mapping[str, PriceSeries] | None = None):
    """Value at ``date_index`` using bars up to and including it, or ``Warmup``.

    Multi-output kinds return a dict such as ``{"k": .., "d": .., "j": ..}``.
    """
    if not 0 <= date_index < len(series):
        raise IndexError(date_index)
    cut = slice(0, date_index + 1)
    peers = None
    if universe is not None:
        peers = {s: ps.take(cut) for s, ps in universe.items()}
    arrays = indicator_arrays(spec, series.take(cut), peers)
    values = {k: float(v[-1]) for k, v in arrays.items()}
    if any(np.isnan(v) for v in values.values()):
        return Warmup
    return values[None] if None in values else values
