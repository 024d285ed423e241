"""The twelve acceptance criteria, one test each (criterion 8 is split into its five parts)."""

import hashlib
import json
import math
import shutil
import time
from dataclasses import replace
from pathlib import Path

import httpx
import numpy as np
import pandas as pd
import pytest
from scipy.stats import chisquare

from conftest import make_series, make_universe
from oracles import ref_information_ratio, ref_sharpe, ref_sortino
from stratmap import cli
from stratmap.backtester import CostModel, run_backtest
from stratmap.dsl import builtin_baseline, compute_schedule, parse_program, serialize
from stratmap.feature_map import (CandidateRecord, EvolutionaryDatabase, FeatureVector,
                                  default_dimensions, encode_category, feature_vector_from,
                                  insert_candidate)
from stratmap.generators import (ChatClient, EndpointConfig, GenerationContext, GenerationFailure,
                                 LLMGenerator)
from stratmap.islands import Island
from stratmap.market_data import PriceSeries, Universe, align_calendar
from stratmap.metrics import (MetricSet, combined_score, information_ratio, max_drawdown, sharpe_ratio,
                              sortino_ratio)
from stratmap.orchestrator import Evolution, run_evolution
from stratmap.sampling import bitflip_perturb, default_k_bf, sample_parent


# ---- 1 ------------------------------------------------------------------------

def _quadratic_mdd_np(e):
    # every (i, j) pair with i <= j; the deepest relative fall from e[i] to e[j]
    rel = (e[None, :] - e[:, None]) / e[:, None]
    return float(min(0.0, np.min(np.where(np.triu(np.ones_like(rel, dtype=bool)), rel, np.inf))))


def test_criterion_01_metric_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    bench = rng.normal(0.0003, 0.01, 511)
    for k in range(1000):
        r = rng.normal(0.0004, 0.015, 511)
        e = 100.0 * np.concatenate([[1.0], np.cumprod(1 + r)])
        assert max_drawdown(e) == _quadratic_mdd_np(e)
        if k % 10 == 0:
            rets = e[1:] / e[:-1] - 1
            lst = rets.tolist()
            assert sharpe_ratio(rets) == pytest.approx(ref_sharpe(lst), abs=1e-12)
            assert sortino_ratio(rets) == pytest.approx(ref_sortino(lst), abs=1e-12)
            assert information_ratio(rets, bench) == pytest.approx(
                ref_information_ratio(lst, bench.tolist()), abs=1e-12)
    assert time.perf_counter() - start < 10


# ---- 2 ------------------------------------------------------------------------

def test_criterion_02_combined_score_arithmetic():
    equity = MetricSet(1.52, 0.0, 0.69, -0.32, 2.56, 0)
    futures = MetricSet(1.03, 0.0, 0.49, -0.154, 0.374, 0)
    assert abs(combined_score(equity) - 1.89) <= 1e-9
    assert abs(combined_score(futures) - 1.366) <= 1e-9


# ---- 3 ------------------------------------------------------------------------

def test_criterion_03_parent_sampling_mixture():
    dims = default_dimensions(("a", "b"), bins=4)
    db = EvolutionaryDatabase(dims)
    island = Island(0, "a")
    for i in range(20):
        rec = CandidateRecord(f"r{i}", 0, 0, "program p\ntags\nentry: true\nexit: false\n"
                              "sizing: equal_weight\nrebalance: daily\n")
        db.records[rec.id] = rec
        island.add(rec.id)
    for i in range(4):
        db.cells[f"00:{i}:0:0:0:0"] = f"r{i * 5}"
    rng = np.random.default_rng(3)
    draws = 100_000
    counts = {rid: 0 for rid in island.population}
    for _ in range(draws):
        counts[sample_parent(island, db, 0.5, rng).id] += 1
    on_map = {f"r{i * 5}" for i in range(4)}
    expected = [draws * (0.15 if rid in on_map else 0.025) for rid in island.population]
    assert sum(expected) == pytest.approx(draws)
    _, p = chisquare([counts[rid] for rid in island.population], expected)
    assert p > 0.001


# ---- 4 ------------------------------------------------------------------------

def test_criterion_04_bitflip_law():
    rng = np.random.default_rng(4)
    trials = 100_000
    dist = {0: 0, 2: 0}
    for _ in range(trials):
        out = bitflip_perturb("0110", 2, rng)
        d = sum(a != b for a, b in zip(out, "0110"))
        dist[d] = dist.get(d, 0) + 1
    assert set(dist) == {0, 2}
    assert abs(dist[0] / trials - 0.25) <= 0.01
    assert abs(dist[2] / trials - 0.75) <= 0.01
    assert default_k_bf(8) == 2


# ---- 5 ------------------------------------------------------------------------

def test_criterion_05_elitism_replay():
    taxonomy = ("x", "y", "z")
    dims = default_dimensions(taxonomy, bins=2)
    assert len(dims) == 6
    db = EvolutionaryDatabase(dims)
    rng = np.random.default_rng(5)
    groups: dict[str, list[CandidateRecord]] = {}
    for i in range(10_000):
        tags = tuple(t for t in taxonomy if rng.random() < 0.5)
        valid = rng.random() > 0.05
        m = MetricSet(sharpe=round(float(rng.normal(0.5, 1)), 1), sortino=float(rng.normal(1, 1.5)),
                      information_ratio=round(float(rng.normal(0, 1)), 1),
                      max_drawdown=-round(float(rng.uniform(0, 0.8)), 1),
                      cumulative_return=float(rng.normal(0.5, 1)),
                      num_transactions=int(rng.integers(0, 5000)), valid=valid)
        rec = CandidateRecord(f"c{i:06d}", 0, i, f"program p\ntags {', '.join(tags)}\n", metrics=m)
        if valid:
            rec.feature_vector = feature_vector_from(m, tags, dims)
            groups.setdefault(rec.feature_vector.key, []).append(rec)
        insert_candidate(db, rec)
    assert len(db.records) == 10_000
    assert set(db.cells) == set(groups)
    for key, recs in groups.items():
        best = max(r.score for r in recs)
        first_best = next(r for r in recs if r.score == best)
        assert db.cells[key] == first_best.id


# ---- 6 ------------------------------------------------------------------------

def test_criterion_06_category_encoding():
    assert encode_category({"momentum", "mean_reversion"}, ["momentum", "arbitrage", "mean_reversion"]) == "101"
    import itertools
    taxonomy = ("a", "b", "c", "d", "e", "f", "g", "h")
    keys = {encode_category(combo, taxonomy)
            for n in range(len(taxonomy) + 1) for combo in itertools.combinations(taxonomy, n)}
    assert len(keys) == 2 ** len(taxonomy)


# ---- 7 ------------------------------------------------------------------------

def test_criterion_07_cost_model():
    cm = CostModel()
    assert cm.commission(100, 50.0) == 1.00
    assert cm.commission(1000, 50.0) == pytest.approx(7.50, abs=1e-12)
    closes = [100.0, 103.0, 97.5, 120.0, 150.0]
    uni = make_universe({"ONE": closes})
    report = run_backtest(builtin_baseline("buy_hold"), uni, CostModel.zero(), 1_000_000.0)
    assert report.cumulative_return == closes[-1] / closes[0] - 1


# ---- 8 ------------------------------------------------------------------------

def _read(path: Path) -> bytes:
    return path.read_bytes()


def _db_fingerprint(run_dir: Path, generation: int) -> dict:
    ck = run_dir / "checkpoints" / f"gen_{generation:04d}"
    return {"candidates": hashlib.sha256(_read(run_dir / "candidates.jsonl")).hexdigest(),
            "cells": hashlib.sha256(_read(ck / "cells.json")).hexdigest(),
            "state": hashlib.sha256(_read(ck / "state.json")).hexdigest()}


def _events(run_dir: Path) -> list[dict]:
    return [json.loads(line) for line in (run_dir / "events.jsonl").read_text().splitlines()]


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Two full runs with the same seed plus an interrupted-and-resumed run."""
    from conftest import SYNTH_SPLITS
    import yaml
    from stratmap.config import load_config
    from stratmap.synthetic import synthetic_universe, write_universe

    root = tmp_path_factory.mktemp("e2e")
    write_universe(synthetic_universe(), root / "data")
    doc = {"name": "e2e", "data": "data/universe.yaml", "splits": dict(SYNTH_SPLITS),
           "taxonomy": ["momentum_trend", "mean_reversion", "volatility"], "generations": 30,
           "migration_interval": 10, "insight_interval": 15, "features": {"bins": 16}, "seed": 2024}
    (root / "config.yaml").write_text(yaml.safe_dump(doc))
    cfg = lambda name: load_config(root / "config.yaml", run_dir=name)  # noqa: E731

    start = time.perf_counter()
    snapshots = []
    run_evolution(cfg("a"), on_generation=lambda evo: snapshots.append(
        (evo.generation, dict(evo.db.cells), {k: evo.db.records[v].score for k, v in evo.db.cells.items()})))
    elapsed = time.perf_counter() - start
    run_evolution(cfg("b"))
    run_evolution(cfg("c"), stop_after=15)
    run_evolution(cfg("c"), resume=root / "c" / "checkpoints" / "gen_0015")
    return {"root": root, "elapsed": elapsed, "snapshots": snapshots, "cfg": cfg}


def test_criterion_08a_same_seed_identical_database(e2e):
    root = e2e["root"]
    assert e2e["elapsed"] < 300
    assert _db_fingerprint(root / "a", 30) == _db_fingerprint(root / "b", 30)


def test_criterion_08b_scores_never_decrease(e2e):
    snaps = e2e["snapshots"]
    assert [g for g, _, _ in snaps] == list(range(31))
    for (_, _, prev), (_, _, cur) in zip(snaps, snaps[1:]):
        for key, score in prev.items():
            assert cur[key] >= score
        assert max(cur.values()) >= max(prev.values())
    best = [e["best_score"] for e in _events(e2e["root"] / "a") if e["event"] == "generation"]
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_criterion_08c_coverage_never_decreases(e2e):
    cov = [e["coverage"] for e in _events(e2e["root"] / "a") if e["event"] == "generation"]
    assert len(cov) == 31
    assert all(b >= a for a, b in zip(cov, cov[1:]))


def test_criterion_08d_migration_schedule(e2e):
    gens = sorted({e["generation"] for e in _events(e2e["root"] / "a") if e["event"] == "migration"})
    assert gens == [10, 20, 30]


def test_criterion_08e_resume_matches_uninterrupted(e2e):
    root = e2e["root"]
    assert _db_fingerprint(root / "c", 30) == _db_fingerprint(root / "a", 30)
    strip = lambda evs: [e for e in evs if e["event"] != "header"]  # noqa: E731
    assert strip(_events(root / "c")) == strip(_events(root / "a"))


# ---- 9 ------------------------------------------------------------------------

def test_criterion_09_single_cell_ablation(e2e):
    cfg = e2e["cfg"]("ablation").model_copy()
    cfg = cfg.model_copy(update={"features": cfg.features.model_copy(update={"bins": 1, "use_category": False})})
    cells = []
    evo = run_evolution(cfg, on_generation=lambda evo: cells.append(len(evo.db.cells)))
    assert evo.db.total_cells == 1
    assert cells == [1] * 31


# ---- 10 -----------------------------------------------------------------------

def _poison(universe: Universe, after: str) -> Universe:
    cut = np.datetime64(after, "D")
    out = []
    for ps in universe.series.values():
        late = ps.dates > cut
        sentinel = np.where(late, 9999.0, 1.0)
        out.append(PriceSeries(ps.symbol, ps.dates, np.where(late, sentinel, ps.open),
                               np.where(late, sentinel, ps.high), np.where(late, sentinel, ps.low),
                               np.where(late, sentinel, ps.close), np.where(late, 1, ps.volume),
                               ps.asset_class, ps.point_value))
    return align_calendar(out)


def test_criterion_10_no_lookahead(e2e):
    from stratmap.synthetic import synthetic_universe
    cfg = e2e["cfg"]
    clean = synthetic_universe()
    poisoned = _poison(clean, "2018-12-31")
    assert not np.array_equal(poisoned.close_matrix(), clean.close_matrix())
    run_evolution(cfg("poisoned"), universe=poisoned)
    root = e2e["root"]
    assert _db_fingerprint(root / "poisoned", 30) == _db_fingerprint(root / "a", 30)


# ---- 11 -----------------------------------------------------------------------

def _ohlc_fixture(n=30):
    """Two-asset, 30-bar fixture plus pandas frames used for the hand computation."""
    rng = np.random.default_rng(11)
    days = np.arange(np.datetime64("2021-01-04"), np.datetime64("2021-01-04") + 60)
    days = days[np.is_busday(days)][:n]
    series, frames = [], {}
    for sym, vol in (("AAA", 0.03), ("BBB", 0.04)):
        close = np.round(50 * np.exp(np.cumsum(rng.normal(0, vol, n))), 2)
        high = np.round(close * (1 + rng.uniform(0, 0.02, n)), 2)
        low = np.round(close * (1 - rng.uniform(0, 0.02, n)), 2)
        series.append(PriceSeries(sym, days, close.copy(), high, low, close,
                                  np.full(n, 10**6, dtype=np.int64)))
        frames[sym] = pd.DataFrame({"close": close, "high": high, "low": low})
    return align_calendar(series), frames


def _rsi_kdj_strength(f):
    delta = f.close.diff()
    gain = delta.where(delta > 0, 0).rolling(14).mean()
    loss = (-delta.where(delta < 0, 0)).rolling(14).mean()
    rsi = 100 - 100 / (1 + gain / loss)
    lo, hi = f.low.rolling(14).min(), f.high.rolling(14).max()
    k = 100 * (f.close - lo) / (hi - lo)
    d = k.rolling(3).mean()
    out = []
    for t in range(len(f)):
        if any(pd.isna(v) for v in (rsi[t], k[t], d[t])):
            out.append(None)
        elif rsi[t] < 25 and k[t] < 15:
            out.append(2.0)
        elif rsi[t] < 30 and k[t] < 20 and d[t] < 20:
            out.append(1.0)
        elif rsi[t] > 70 or k[t] > 80 or d[t] > 80:
            out.append(0.0)
        else:
            out.append(0.5)
    return out


def _macd_states(f, fast, slow, signal):
    macd = f.close.ewm(span=fast).mean() - f.close.ewm(span=slow).mean()
    hist = macd - macd.ewm(span=signal).mean()
    return hist


def test_criterion_11_baseline_suite(synth_config, capsys):
    cfg = synth_config(market_cap_shares={"AAA": 3e6, "BBB": 1e6, "CCC": 2e6})
    cfg_path = Path(cfg.base_dir) / "config_0.yaml"
    assert cli.main(["baselines", "--config", str(cfg_path), "--split", "test"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["strategy", "SR", "MDD", "IR", "CR"]
    names = [ln.split()[0] for ln in lines[1:]]
    assert names == ["market_cap", "equal_weight", "risk_parity", "rsi_kdj", "macd_cross", "buy_hold"]

    uni, frames = _ohlc_fixture()

    # rsi_kdj at its stock parameters: weights are strength over total strength
    strengths = {sym: _rsi_kdj_strength(f) for sym, f in frames.items()}
    sched = compute_schedule(builtin_baseline("rsi_kdj"), uni)
    live = 0
    for t in range(30):
        sa, sb = strengths["AAA"][t], strengths["BBB"][t]
        assert sched.warmup[t, 0] == (sa is None) and sched.warmup[t, 1] == (sb is None)
        if sa is None:
            continue
        live += 1
        total = sa + sb
        want = [sa / total, sb / total] if total > 0 else [0.0, 0.0]
        assert sched.weights[t].tolist() == pytest.approx(want, abs=1e-12)
    assert live >= 10

    # macd_cross: stock windows leave no live bar in 30, so the same rules run with short windows
    text = serialize(builtin_baseline("macd_cross")).replace("macd_hist(12, 26, 9)", "macd_hist(3, 6, 4)")
    sched = compute_schedule(parse_program(text), uni)
    hists = {sym: _macd_states(f, 3, 6, 4) for sym, f in frames.items()}
    holding = {"AAA": False, "BBB": False}
    checked = 0
    seen_states = set()
    for t in range(30):
        if sched.warmup[t].any():
            assert sched.weights[t].sum() == 0
            continue
        for sym in holding:
            h = hists[sym][t]
            if not holding[sym] and h > 0:
                holding[sym] = True
            elif holding[sym] and h <= 0:
                holding[sym] = False
        active = [holding["AAA"], holding["BBB"]]
        seen_states.add(tuple(active))
        if any(active):
            want = [1.0 / sum(active) if a else 0.0 for a in active]
        else:
            want = [0.5, 0.5]  # nothing held: equal-weight fallback
        assert sched.weights[t].tolist() == pytest.approx(want, abs=1e-12)
        checked += 1
    assert checked >= 20
    assert len(seen_states) >= 3


# ---- 12 -----------------------------------------------------------------------

_HYP = ("<hypothesis>trend persists</hypothesis><rationale>herding</rationale>"
        "<objectives>beat buy and hold</objectives><expected_insights>trend strength</expected_insights>"
        "<risks_limitations>whipsaw</risks_limitations><experimentation_ideas>vary window</experimentation_ideas>")
_GOOD = ("program x\ntags momentum_trend\nindicator f = sma(10)\nindicator s = sma(30)\n"
         "entry: f > s\nexit: f < s\nsizing: equal_weight\nrebalance: daily\n")
_BAD = "program x\ntags momentum_trend\nentry: f >\nexit: false\nsizing: equal_weight\nrebalance: daily\n"


def _scripted(replies):
    """Fake endpoint answering from a list in order, or from a function of the prompt."""
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append(body)
        prompt = body["messages"][0]["content"]
        reply = replies(prompt) if callable(replies) else replies.pop(0)
        return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})

    client = ChatClient(EndpointConfig(max_retries=0), transport=httpx.MockTransport(handler), sleep=lambda s: None)
    return client, seen


def test_criterion_12_llm_repair_contract(synth_config):
    cfg = synth_config(generations=1, generator={"kind": "llm"})
    parent = CandidateRecord("c0", 0, 0, serialize(builtin_baseline("equal_weight")))
    ctx = GenerationContext(parent, [], [], "schema", tuple(cfg.taxonomy), 0, 1)

    client, seen = _scripted([_HYP, _BAD, _GOOD])
    outcome = LLMGenerator(client).propose(ctx)
    assert outcome.repair_attempts == 1
    assert "entry: f > s\n" in serialize(outcome.program)
    assert "line 3" in seen[2]["messages"][0]["content"]

    client, seen = _scripted([_HYP, _BAD, _BAD, _BAD, _BAD])
    with pytest.raises(GenerationFailure):
        LLMGenerator(client).propose(ctx)
    assert len(seen) == 5  # research, first attempt, three repairs

    # inside the loop the failure skips the candidate and is logged
    client, _ = _scripted(lambda prompt: _HYP if "<hypothesis>" in prompt else _BAD)
    evo = run_evolution(cfg, generator=LLMGenerator(client, cfg.taxonomy))
    events = [json.loads(x) for x in (evo.run_dir / "events.jsonl").read_text().splitlines()]
    skipped = [e for e in events if e["event"] == "skipped"]
    assert skipped and "GenerationFailure" in skipped[0]["reason"]
    assert len(evo.db) == len(cfg.taxonomy) + 1
