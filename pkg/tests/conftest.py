import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from stratmap.config import load_config
from stratmap.market_data import PriceSeries, align_calendar
from stratmap.synthetic import synthetic_universe, write_universe

sys.path.insert(0, str(Path(__file__).parent))

SYNTH_SPLITS = {"train": ["2015-01-01", "2018-12-31"], "valid": ["2019-01-01", "2019-12-31"],
                "test": ["2020-01-01", "2021-12-31"]}


def make_series(symbol, closes, volume=1_000_000, start="2020-01-01", opens=None):
    closes = np.asarray(closes, dtype=float)
    n = len(closes)
    days = np.arange(np.datetime64(start, "D"), np.datetime64(start, "D") + 4 * n)
    days = days[np.is_busday(days)][:n]
    opens = closes.copy() if opens is None else np.asarray(opens, dtype=float)
    high = np.maximum(opens, closes) * 1.01
    low = np.minimum(opens, closes) * 0.99
    vol = np.full(n, volume, dtype=np.int64)
    return PriceSeries(symbol, days, opens, high, low, closes, vol)


def make_universe(closes_by_symbol, **kw):
    return align_calendar([make_series(s, c, **kw) for s, c in closes_by_symbol.items()])


@pytest.fixture(scope="session")
def synth():
    return synthetic_universe()


@pytest.fixture
def synth_config(tmp_path):
    """Writes the synthetic universe plus a config into tmp_path and returns a loader."""
    data_dir = tmp_path / "data"
    write_universe(synthetic_universe(), data_dir)

    def build(**overrides):
        doc = {
            "name": "test",
            "data": "data/universe.yaml",
            "splits": dict(SYNTH_SPLITS),
            "taxonomy": ["momentum_trend", "mean_reversion", "volatility"],
            "generations": 30,
            "migration_interval": 10,
            "insight_interval": 15,
            "seed": 42,
            "run_dir": "run",
        }
        doc.update(overrides)
        path = tmp_path / f"config_{len(list(tmp_path.glob('config_*.yaml')))}.yaml"
        path.write_text(yaml.safe_dump(doc), encoding="utf-8")
        return load_config(path)

    return build


# ---- one summary line per acceptance criterion ---------------------------------

_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1]
        prev = _criteria.get(name)
        if prev != "FAIL":
            _criteria[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        terminalreporter.write_line(f"{_criteria[name]}  {name}")
