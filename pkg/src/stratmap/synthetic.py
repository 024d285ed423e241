"""Seeded synthetic OHLCV universe used by the examples and tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .market_data import PriceSeries, Universe, align_calendar, write_ohlcv_csv

# (annual drift, annual vol) per regime; regimes switch every few months
REGIMES = ((0.25, 0.15), (-0.30, 0.35), (0.02, 0.10), (0.10, 0.20))
SYMBOLS = ("AAA", "BBB", "CCC")


def business_days(start: str, end: str) -> np.ndarray:
    days = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    return days[np.is_busday(days)]


def synthetic_series(symbol: str, dates: np.ndarray, rng: np.random.Generator,
                     start_price: float = 100.0, mean_revert: float = 0.0) -> PriceSeries:
    n = len(dates)
    regime = np.zeros(n, dtype=int)
    i = 0
    while i < n:
        length = int(rng.integers(40, 160))
        regime[i:i + length] = rng.integers(len(REGIMES))
        i += length
    mu = np.array([REGIMES[r][0] for r in regime]) / 252
    sigma = np.array([REGIMES[r][1] for r in regime]) / np.sqrt(252)
    log_p = np.empty(n)
    log_p[0] = np.log(start_price)
    anchor = log_p[0]
    for t in range(1, n):
        pull = -mean_revert * (log_p[t - 1] - anchor)
        log_p[t] = log_p[t - 1] + mu[t] - 0.5 * sigma[t] ** 2 + pull + sigma[t] * rng.standard_normal()
        anchor += mu[t]
    close = np.round(np.exp(log_p), 4)
    gap = sigma * 0.3 * rng.standard_normal(n)
    open_ = np.round(np.concatenate([[close[0]], close[:-1]]) * np.exp(gap), 4)
    wick = np.abs(sigma[:, None] * 0.5 * rng.standard_normal((n, 2)))
    high = np.round(np.maximum(open_, close) * np.exp(wick[:, 0]), 4)
    low = np.round(np.minimum(open_, close) * np.exp(-wick[:, 1]), 4)
    volume = np.round(2_000_000 * np.exp(0.3 * rng.standard_normal(n) + 2 * np.abs(gap))).astype(np.int64)
    return PriceSeries(symbol, dates.astype("datetime64[D]"), open_, high, low, close, volume)


def synthetic_universe(seed: int = 7, start: str = "2015-01-02", end: str = "2021-12-31",
                       symbols=SYMBOLS) -> Universe:
    rng = np.random.default_rng(seed)
    dates = business_days(start, end)
    series = []
    for k, sym in enumerate(symbols):
        series.append(synthetic_series(sym, dates, rng, 50.0 + 40.0 * k, mean_revert=0.02 * k))
    return align_calendar(series)


def write_universe(universe: Universe, folder: str | Path) -> Path:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    entries = {}
    for sym, ps in universe.series.items():
        write_ohlcv_csv(ps, folder / f"{sym}.csv")
        entries[sym] = {"path": f"{sym}.csv", "asset_class": ps.asset_class, "point_value": ps.point_value}
    manifest = folder / "universe.yaml"
    manifest.write_text(yaml.safe_dump({"symbols": entries}, sort_keys=True), encoding="utf-8")
    return manifest


__all__ = ["synthetic_universe", "synthetic_series", "write_universe", "business_days", "SYMBOLS"]
