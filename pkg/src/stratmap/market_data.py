"""Daily OHLCV loading, calendar alignment and train/valid/test slicing."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import yaml

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("date", "open", "high", "low", "close", "volume")
ASSET_CLASSES = ("equity", "futures")


class MarketDataError(ValueError):
    pass


class MalformedRow(MarketDataError):
    pass


class OhlcViolation(MarketDataError):
    pass


class DuplicateDate(MarketDataError):
    pass


class EmptyIntersection(MarketDataError):
    pass


class EmptySplit(MarketDataError):
    pass


@dataclass(frozen=True)
class Bar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def check(self, row: int | None = None) -> None:
        where = f" (row {row})" if row is not None else ""
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise OhlcViolation(f"non-positive price on {self.date}{where}")
        if self.volume < 0:
            raise OhlcViolation(f"negative volume on {self.date}{where}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise OhlcViolation(
                f"low/high do not bracket open/close on {self.date}{where}: "
                f"o={self.open} h={self.high} l={self.low} c={self.close}"
            )


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Date-ordered bars for one symbol, stored column-wise."""

    symbol: str
    dates: np.ndarray  # datetime64[D]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray  # int64
    asset_class: str = "equity"
    point_value: float = 1.0

    def __post_init__(self):
        for arr in (self.dates, self.open, self.high, self.low, self.close, self.volume):
            arr.setflags(write=False)
        if len(self.dates) > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise DuplicateDate(f"{self.symbol}: dates not strictly increasing")

    @classmethod
    def from_bars(cls, symbol: str, bars: Iterable[Bar], asset_class: str = "equity",
                  point_value: float = 1.0) -> "PriceSeries":
        bars = sorted(bars, key=lambda b: b.date)
        seen = set()
        for i, b in enumerate(bars):
            if b.date in seen:
                raise DuplicateDate(f"{symbol}: duplicate date {b.date}")
            seen.add(b.date)
            b.check(i)
        return cls(
            symbol=symbol,
            dates=np.array([b.date for b in bars], dtype="datetime64[D]"),
            open=np.array([b.open for b in bars], dtype=float),
            high=np.array([b.high for b in bars], dtype=float),
            low=np.array([b.low for b in bars], dtype=float),
            close=np.array([b.close for b in bars], dtype=float),
            volume=np.array([b.volume for b in bars], dtype=np.int64),
            asset_class=asset_class,
            point_value=float(point_value),
        )

    def __len__(self) -> int:
        return len(self.dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return (
            self.symbol == other.symbol
            and self.asset_class == other.asset_class
            and self.point_value == other.point_value
            and all(np.array_equal(getattr(self, f), getattr(other, f))
                    for f in ("dates", "open", "high", "low", "close", "volume"))
        )

    def bar(self, i: int) -> Bar:
        return Bar(self.dates[i].item(), float(self.open[i]), float(self.high[i]),
                   float(self.low[i]), float(self.close[i]), int(self.volume[i]))

    @property
    def bars(self) -> list[Bar]:
        return [self.bar(i) for i in range(len(self))]

    def take(self, mask_or_index) -> "PriceSeries":
        return PriceSeries(
            self.symbol, self.dates[mask_or_index], self.open[mask_or_index],
            self.high[mask_or_index], self.low[mask_or_index], self.close[mask_or_index],
            self.volume[mask_or_index], self.asset_class, self.point_value,
        )


def _parse_row(row: dict, lineno: int) -> Bar:
    try:
        date = dt.date.fromisoformat(row["date"].strip())
    except (ValueError, AttributeError) as exc:
        raise MalformedRow(f"line {lineno}: bad date {row.get('date')!r}") from exc
    try:
        o, h, l, c = (float(row[k]) for k in ("open", "high", "low", "close"))
        vol_f = float(row["volume"])
    except (TypeError, ValueError) as exc:
        raise MalformedRow(f"line {lineno}: bad number in {row}") from exc
    if not all(np.isfinite([o, h, l, c, vol_f])) or vol_f != int(vol_f):
        raise MalformedRow(f"line {lineno}: non-finite price or fractional volume")
    return Bar(date, o, h, l, c, int(vol_f))


def load_ohlcv_csv(path: str | Path, symbol: str, asset_class: str = "equity",
                   point_value: float = 1.0) -> PriceSeries:
    """Read one symbol's CSV. Columns may appear in any order; extra columns are ignored."""
    if asset_class not in ASSET_CLASSES:
        raise MarketDataError(f"unknown asset_class {asset_class!r}")
    path = Path(path)
    bars: list[Bar] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip().lower() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MalformedRow(f"{path}: missing columns {missing}")
        reader.fieldnames = header
        for lineno, row in enumerate(reader, start=2):
            bars.append(_parse_row(row, lineno))
    seen: dict[dt.date, int] = {}
    for i, b in enumerate(bars):
        if b.date in seen:
            raise DuplicateDate(f"{path}: date {b.date} on data rows {seen[b.date]} and {i}")
        seen[b.date] = i
        try:
            b.check(i)
        except OhlcViolation as exc:
            raise OhlcViolation(f"{path}: {exc}") from None
    return PriceSeries.from_bars(symbol, bars, asset_class, point_value)


def write_ohlcv_csv(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)
        for i in range(len(series)):
            w.writerow([
                str(series.dates[i]), repr(float(series.open[i])), repr(float(series.high[i])),
                repr(float(series.low[i])), repr(float(series.close[i])), int(series.volume[i]),
            ])


@dataclass(frozen=True, eq=False)
class Universe:
    """Aligned set of series sharing one calendar. Also serves as a dataset view."""

    series: Mapping[str, PriceSeries]
    calendar: np.ndarray
    name: str = "full"
    dropped: Mapping[str, int] = field(default_factory=dict)

    @property
    def symbols(self) -> list[str]:
        return list(self.series)

    def __len__(self) -> int:
        return len(self.calendar)

    def head(self, n: int) -> "Universe":
        """First ``n`` days only; used to prove evaluations never read ahead."""
        return Universe({s: ps.take(slice(0, n)) for s, ps in self.series.items()},
                        self.calendar[:n], self.name)

    def slice_dates(self, start: dt.date, end: dt.date, name: str) -> "Universe":
        mask = (self.calendar >= np.datetime64(start, "D")) & (self.calendar <= np.datetime64(end, "D"))
        if not mask.any():
            raise EmptySplit(f"{name}: no trading day in {start}..{end}")
        return Universe({s: ps.take(mask) for s, ps in self.series.items()},
                        self.calendar[mask], name)

    def close_matrix(self) -> np.ndarray:
        return np.column_stack([self.series[s].close for s in self.symbols])


def align_calendar(series_set: Iterable[PriceSeries]) -> Universe:
    series_list = list(series_set)
    if not series_list:
        raise EmptyIntersection("no series given")
    common = series_list[0].dates
    for ps in series_list[1:]:
        common = np.intersect1d(common, ps.dates)
    if len(common) == 0:
        raise EmptyIntersection("series share no trading days")
    aligned, dropped = {}, {}
    for ps in series_list:
        mask = np.isin(ps.dates, common)
        dropped[ps.symbol] = int((~mask).sum())
        aligned[ps.symbol] = ps.take(mask) if dropped[ps.symbol] else ps
        if dropped[ps.symbol]:
            log.info("%s: dropped %d bars outside the shared calendar", ps.symbol, dropped[ps.symbol])
    return Universe(aligned, common.copy(), dropped=dropped)


def _as_date(v) -> dt.date:
    if isinstance(v, dt.date):
        return v
    return dt.date.fromisoformat(str(v))


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[dt.date, dt.date]
    valid: tuple[dt.date, dt.date]
    test: tuple[dt.date, dt.date]

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            a, b = getattr(self, name)
            if a > b:
                raise MarketDataError(f"{name} range starts after it ends")
        if not (self.train[1] < self.valid[0] and self.valid[1] < self.test[0]):
            raise MarketDataError("split ranges must be disjoint and ordered train < valid < test")

    @classmethod
    def from_strings(cls, train, valid, test) -> "SplitSpec":
        conv = lambda r: (_as_date(r[0]), _as_date(r[1]))  # noqa: E731
        return cls(conv(train), conv(valid), conv(test))


EQUITY_SPLITS = SplitSpec.from_strings(
    ("2015-08-01", "2020-07-31"), ("2020-08-01", "2022-07-31"), ("2022-08-01", "2025-07-31"))
FUTURES_SPLITS = SplitSpec.from_strings(
    ("2018-01-01", "2021-07-31"), ("2021-08-01", "2022-07-31"), ("2022-08-01", "2024-01-01"))


def split_periods(universe: Universe, spec: SplitSpec) -> tuple[Universe, Universe, Universe]:
    return (
        universe.slice_dates(*spec.train, "train"),
        universe.slice_dates(*spec.valid, "valid"),
        universe.slice_dates(*spec.test, "test"),
    )


def load_manifest(path: str | Path) -> Universe:
    """Load a universe manifest: ``symbols: {SYM: {path, asset_class, point_value}}``.

    Relative CSV paths resolve against the manifest's directory.
    """
    path = Path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    entries = doc.get("symbols", doc)
    if not isinstance(entries, dict) or not entries:
        raise MarketDataError(f"{path}: manifest lists no symbols")
    series = []
    for sym, entry in entries.items():
        if "path" not in entry:
            raise MarketDataError(f"{path}: symbols.{sym}.path is required")
        csv_path = Path(entry["path"])
        if not csv_path.is_absolute():
            csv_path = path.parent / csv_path
        series.append(load_ohlcv_csv(csv_path, sym, entry.get("asset_class", "equity"),
                                     float(entry.get("point_value", 1.0))))
    return align_calendar(series)
