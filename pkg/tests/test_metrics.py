import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_mdd, ref_information_ratio, ref_sharpe, ref_sortino
from stratmap.metrics import (DegenerateSeries, InvalidMetrics, MetricSet, NoDownside, ZeroTrackingError,
                              combined_score, compute_metrics, cumulative_return, information_ratio,
                              max_drawdown, score_or_fail, sharpe_ratio, sortino_ratio)

# magnitudes below 1e-9 only probe float underflow, covered separately below
_ret = st.one_of(st.just(0.0), st.floats(1e-9, 0.2), st.floats(-0.2, -1e-9))
returns = st.lists(_ret, min_size=3, max_size=80)


@settings(max_examples=200, deadline=None)
@given(returns)
def test_mdd_matches_brute_force(rs):
    e = [100.0]
    for r in rs:
        e.append(e[-1] * (1 + r))
    assert max_drawdown(e) == pytest.approx(brute_force_mdd(e), abs=1e-12)
    assert -1 < max_drawdown(e) <= 0


@settings(max_examples=200, deadline=None)
@given(returns, returns)
def test_ratios_match_oracles(rs, bs):
    n = min(len(rs), len(bs))
    rs, bs = rs[:n], bs[:n]
    r = np.array(rs)
    if r.std(ddof=1) > 1e-9:
        assert sharpe_ratio(r) == pytest.approx(ref_sharpe(rs), rel=1e-9, abs=1e-9)
    if (r < 0).any():
        assert sortino_ratio(r) == pytest.approx(ref_sortino(rs), rel=1e-9, abs=1e-9)
    if (r - np.array(bs)).std(ddof=1) > 1e-9:
        assert information_ratio(r, bs) == pytest.approx(ref_information_ratio(rs, bs), rel=1e-9, abs=1e-9)


def test_known_values():
    r = np.array([0.01, -0.02, 0.03, 0.0])
    mean, sd = 0.005, np.std(r, ddof=1)
    assert sharpe_ratio(r) == pytest.approx(mean / sd * math.sqrt(252))
    assert sortino_ratio(r) == pytest.approx(mean / 0.02 * math.sqrt(252))
    assert max_drawdown([100, 120, 90, 130, 65]) == -0.5
    assert cumulative_return([100, 150]) == 0.5


def test_undefined_ratios_raise():
    with pytest.raises(DegenerateSeries):
        sharpe_ratio([0.01, 0.01, 0.01])
    with pytest.raises(DegenerateSeries):
        sharpe_ratio([0.01])
    with pytest.raises(NoDownside):
        sortino_ratio([0.01, 0.02])
    with pytest.raises(NoDownside):
        sortino_ratio([0.0, 0.0, -1e-178])
    with pytest.raises(ZeroTrackingError):
        information_ratio([0.01, 0.02], [0.01, 0.02])
    with pytest.raises(ValueError):
        information_ratio([0.01, 0.02, 0.0], [0.01, 0.02])


def test_compute_metrics_flags_invalid():
    flat = compute_metrics([100.0] * 10, 0, [0.0] * 9)
    assert not flat.valid and "sharpe" in flat.reason
    assert score_or_fail(flat) == -math.inf
    with pytest.raises(InvalidMetrics):
        combined_score(flat)
    assert math.isinf(flat.get("score"))


def test_score_is_sr_plus_ir_plus_mdd():
    rng = np.random.default_rng(0)
    e = 100 * np.cumprod(1 + rng.normal(0.001, 0.01, 300))
    b = rng.normal(0.0005, 0.01, 299)
    m = compute_metrics(e, 12, b)
    assert m.valid
    assert combined_score(m) == m.sharpe + m.information_ratio + m.max_drawdown
    assert m.get("score") == combined_score(m)
    with pytest.raises(KeyError):
        m.get("alpha")


def test_dict_round_trip_is_strict_json():
    m = MetricSet(math.nan, 1.0, math.inf, -0.1, 0.2, 3, False, "x")
    doc = json.loads(json.dumps(m.to_dict(), allow_nan=False))
    back = MetricSet.from_dict(doc)
    assert math.isnan(back.sharpe) and math.isnan(back.information_ratio)
    assert back.sortino == 1.0 and back.num_transactions == 3 and back.reason == "x"
