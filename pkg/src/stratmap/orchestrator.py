"""Evolution loop, checkpointing and out-of-sample selection."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .backtester import BacktestReport, CandidateFailure, CostModel, run_backtest
from .config import RunConfig
from .dsl import Program, builtin_baseline, serialize
from .feature_map import (CandidateRecord, EvolutionaryDatabase, FeatureDimension, insert_candidate,
                          map_stats)
from .generators import (ChatClient, EndpointError, GenerationContext, GenerationFailure,
                         GeneratorOutcome, Insight, LLMGenerator, MalformedHypothesis,
                         MutationalGenerator, curate_insights, data_schema_prompt, load_templates)
from .islands import Island, init_islands, migrate
from .market_data import Universe, load_manifest, split_periods
from .metrics import MetricSet, compute_metrics, score_or_fail
from .sampling import sample_cousins, sample_parent

log = logging.getLogger(__name__)

CANDIDATES_FILE = "candidates.jsonl"
EVENTS_FILE = "events.jsonl"
CHECKPOINT_DIR = "checkpoints"
FORMAT_VERSION = 1


class CorruptCheckpoint(RuntimeError):
    pass


class ConfigMismatch(RuntimeError):
    pass


class NoValidCandidate(RuntimeError):
    pass


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


# ---- evaluation ---------------------------------------------------------------

class Evaluator:
    """Backtest plus metrics on one view against a fixed benchmark."""

    def __init__(self, view: Universe, config: RunConfig, cost_model: CostModel | None = None):
        self.view = view
        self.config = config
        self.cost_model = cost_model or config.cost.build()
        bench = benchmark_program(config)
        report = self.backtest(bench)
        self.benchmark_returns = report.daily_returns

    def backtest(self, program: Program) -> BacktestReport:
        c = self.config
        return run_backtest(program, self.view, self.cost_model, c.initial_capital, c.allow_short,
                            c.fill_mode)

    def check(self, program: Program) -> BacktestReport:
        # raises CandidateFailure, which drives the LLM repair loop
        return self.backtest(program)

    def score(self, program: Program, report: BacktestReport | None = None) -> tuple[MetricSet | None, str, BacktestReport | None]:
        try:
            report = report if report is not None else self.backtest(program)
        except CandidateFailure as exc:
            return None, f"backtest failed: {exc}", None
        metrics = compute_metrics(report.equity_curve, report.num_transactions, self.benchmark_returns)
        report.metrics = metrics
        error = "" if metrics.valid else f"invalid metrics: {metrics.reason}"
        return metrics, error, report


def benchmark_program(config: RunConfig) -> Program:
    return builtin_baseline(config.benchmark, config.market_cap_shares)


def make_generator(config: RunConfig, client: ChatClient | None = None):
    g = config.generator
    if g.kind == "mutational":
        return MutationalGenerator(config.taxonomy, config.param_bounds, config.kind_table)
    if client is None:
        client = ChatClient(g.endpoint.build())
    templates = load_templates(config.resolve(g.prompts_dir) if g.prompts_dir else None)
    return LLMGenerator(client, config.taxonomy, templates, g.repair_budget, config.param_bounds,
                        config.kind_table)


def load_universe(config: RunConfig) -> Universe:
    return load_manifest(config.data_path)


# ---- run state ----------------------------------------------------------------

@dataclass
class Proposal:
    island_id: int
    record: CandidateRecord | None
    insight: str = ""
    skipped: str = ""
    transcripts: list | None = None


class Evolution:
    """Owns the database, islands, random streams and the run directory."""

    def __init__(self, config: RunConfig, train: Universe, generator=None,
                 run_dir: str | Path | None = None):
        self.config = config
        self.train = train
        self.dims: list[FeatureDimension] = config.dimensions()
        self.db = EvolutionaryDatabase(self.dims)
        self.islands: list[Island] = []
        self.generator = generator if generator is not None else make_generator(config)
        self.sampling = config.sampling.build()
        self.evaluator = Evaluator(train, config)
        self.schema_prompt = data_schema_prompt(train)
        self.run_dir = Path(run_dir) if run_dir is not None else config.run_path
        self.generation = 0
        self.next_id = 0
        self.rngs: list[np.random.Generator] = []
        self.config_hash = config.config_hash()

    # -- files --

    @property
    def candidates_path(self) -> Path:
        return self.run_dir / CANDIDATES_FILE

    @property
    def events_path(self) -> Path:
        return self.run_dir / EVENTS_FILE

    def _append(self, path: Path, rows: list[dict]) -> None:
        if not rows:
            return
        with path.open("a", encoding="utf-8") as fh:
            for row in rows:
                fh.write(_dumps(row) + "\n")

    def event(self, kind: str, **fields) -> None:
        self._append(self.events_path, [{"event": kind, **{k: _finite(v) for k, v in fields.items()}}])

    # -- records --

    def _new_id(self) -> str:
        rid = f"c{self.next_id:06d}"
        self.next_id += 1
        return rid

    def _score_record(self, program: Program, island_id: int, report=None, **extra) -> CandidateRecord:
        metrics, error, report = self.evaluator.score(program, report)
        rec = CandidateRecord(id="", island_id=island_id, generation=self.generation,
                              program_text=serialize(program), metrics=metrics, error=error, **extra)
        rec.report = report
        if not rec.failed:
            rec.feature_vector = self.db.compute_feature_vector(rec)
        return rec

    def _commit(self, rec: CandidateRecord) -> dict:
        rec.id = self._new_id()
        res = insert_candidate(self.db, rec)
        self._append(self.candidates_path, [rec.to_dict()])
        return {"id": rec.id, "island": rec.island_id, "parent": rec.parent_id,
                "accepted": res.accepted, "replaced": res.replaced, "cell": res.key,
                "score": _finite(rec.score), "error": rec.error or None}

    # -- initialization --

    def initialize(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.candidates_path.write_text("", encoding="utf-8")
        self.events_path.write_text("", encoding="utf-8")
        self.event("header", timestamp=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
                   config_hash=self.config_hash, name=self.config.name)
        streams = np.random.SeedSequence(self.config.seed).spawn(len(self.config.taxonomy) + 1)
        self.rngs = [np.random.Generator(np.random.PCG64(s)) for s in streams]

        def evaluate(program: Program, island_id: int) -> CandidateRecord:
            return self._score_record(program, island_id,
                                      hypothesis={"hypothesis": f"seed strategy {program.name}"})

        def insert(rec: CandidateRecord) -> None:
            self.event("seed", **self._commit(rec))

        self.islands, _ = init_islands(self.config.taxonomy, self.db, evaluate, self.config.seeds or None,
                                       self.config.kind_table, insert)
        self._stats_event()
        self.checkpoint()

    # -- one generation --

    def _propose(self, island: Island) -> Proposal:
        rng = self.rngs[island.id]
        parent = sample_parent(island, self.db, self.sampling, rng)
        cousins = sample_cousins(parent, island, self.db, self.sampling, rng)
        ctx = GenerationContext(parent, cousins, list(island.insights), self.schema_prompt,
                                tuple(self.config.taxonomy), island.id, self.generation,
                                check=self.evaluator.check)
        try:
            outcome: GeneratorOutcome = self.generator.propose(ctx, rng)
        except (GenerationFailure, MalformedHypothesis, EndpointError) as exc:
            return Proposal(island.id, None, skipped=f"{type(exc).__name__}: {exc}",
                            transcripts=getattr(exc, "transcripts", None))
        report = outcome.check_result if isinstance(outcome.check_result, BacktestReport) else None
        rec = self._score_record(outcome.program, island.id, report, hypothesis=outcome.hypothesis.to_dict(),
                                 parent_id=parent.id, cousin_ids=tuple(c.id for c in cousins))
        analysis, insight = self.generator.analyze(rec, parent, outcome)
        rec.analysis = {**analysis, "edit": outcome.edit, "repair_attempts": outcome.repair_attempts}
        return Proposal(island.id, rec, insight, transcripts=outcome.raw_transcripts)

    def step(self) -> None:
        self.generation += 1
        g = self.generation
        ordered = sorted(self.islands, key=lambda isl: isl.id)
        # every island samples from the database as it stood at the start of the generation
        if self.config.parallel and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                proposals = list(pool.map(self._propose, ordered))
        else:
            proposals = [self._propose(isl) for isl in ordered]

        for island, prop in zip(ordered, proposals):
            if prop.record is None:
                log.info("generation %d island %d skipped: %s", g, island.id, prop.skipped)
                self.event("skipped", generation=g, island=island.id, reason=prop.skipped)
                self._save_transcripts(f"g{g:04d}_i{island.id}_skipped", prop.transcripts)
                continue
            rec = prop.record
            info = self._commit(rec)
            if not rec.failed:
                island.add(rec.id)
            if prop.insight:
                island.insights.append(Insight(island.id, g, prop.insight, rec.id))
            self.event("candidate", generation=g, **info)
            self._save_transcripts(rec.id, prop.transcripts)

        if g % self.config.migration_interval == 0:
            for entry in migrate(self.islands, self.db, self.config.migration_fraction, g):
                self.event("migration", **entry)
        if g % self.config.insight_interval == 0:
            consolidate = getattr(self.generator, "consolidate", None)
            for island in ordered:
                before = len(island.insights)
                island.insights = curate_insights(island.insights, self.config.insight_max, consolidate)
                self.event("curate", generation=g, island=island.id, before=before,
                           after=len(island.insights))
        self._stats_event()
        self.checkpoint()

    def _save_transcripts(self, name: str, transcripts) -> None:
        if not transcripts:
            return
        folder = self.run_dir / "transcripts"
        folder.mkdir(exist_ok=True)
        (folder / f"{name}.json").write_text(json.dumps(transcripts, indent=1), encoding="utf-8")

    def _stats_event(self) -> None:
        stats = map_stats(self.db)
        island_best = {}
        for isl in self.islands:
            best = max((self.db.records[r].score for r in isl.population), default=-math.inf)
            island_best[str(isl.id)] = _finite(best)
        self.event("generation", generation=self.generation, filled=stats["filled"],
                   coverage=stats["coverage"], best_score=stats["best_score"],
                   qd_sum=stats["qd_sum"], island_best=island_best, archive=len(self.db))

    # -- checkpoints --

    def checkpoint(self) -> Path:
        folder = self.run_dir / CHECKPOINT_DIR / f"gen_{self.generation:04d}"
        folder.mkdir(parents=True, exist_ok=True)
        cells = {k: v for k, v in self.db.cells.items()}
        state = {
            "generation": self.generation,
            "next_id": self.next_id,
            "islands": [isl.to_dict() for isl in self.islands],
            "rng_states": [r.bit_generator.state for r in self.rngs],
        }
        cells_text = json.dumps(cells, indent=0, sort_keys=True)
        state_text = json.dumps(state, indent=1, default=int)
        manifest = {
            "format": FORMAT_VERSION,
            "generation": self.generation,
            "config_hash": self.config_hash,
            "dimensions": [d.to_dict() for d in self.dims],
            "candidate_count": len(self.db),
            "candidates_sha256": _file_prefix_hash(self.candidates_path, len(self.db)),
            "event_count": _line_count(self.events_path),
            "cells_sha256": hashlib.sha256(cells_text.encode()).hexdigest(),
            "state_sha256": hashlib.sha256(state_text.encode()).hexdigest(),
        }
        (folder / "cells.json").write_text(cells_text, encoding="utf-8")
        (folder / "state.json").write_text(state_text, encoding="utf-8")
        # the manifest goes last: a checkpoint without one is incomplete
        (folder / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        return folder

    @classmethod
    def resume(cls, config: RunConfig, checkpoint: str | Path, train: Universe, generator=None) -> "Evolution":
        checkpoint = Path(checkpoint)
        run_dir = checkpoint.parent.parent
        try:
            manifest = json.loads((checkpoint / "manifest.json").read_text(encoding="utf-8"))
            cells_text = (checkpoint / "cells.json").read_text(encoding="utf-8")
            state_text = (checkpoint / "state.json").read_text(encoding="utf-8")
        except (OSError, ValueError) as exc:
            raise CorruptCheckpoint(f"cannot read checkpoint {checkpoint}: {exc}") from exc
        evo = cls(config, train, generator, run_dir)
        if manifest.get("dimensions") != [d.to_dict() for d in evo.dims]:
            raise ConfigMismatch("feature dimensions differ from the checkpoint")
        if manifest.get("config_hash") != evo.config_hash:
            raise ConfigMismatch("config differs from the one the checkpoint was written with")
        for name, text in (("cells", cells_text), ("state", state_text)):
            if hashlib.sha256(text.encode()).hexdigest() != manifest.get(f"{name}_sha256"):
                raise CorruptCheckpoint(f"{name}.json does not match the manifest")
        count = manifest["candidate_count"]
        if _file_prefix_hash(evo.candidates_path, count) != manifest["candidates_sha256"]:
            raise CorruptCheckpoint("candidate log does not match the checkpoint manifest")

        lines = evo.candidates_path.read_text(encoding="utf-8").splitlines()[:count]
        for line in lines:
            rec = CandidateRecord.from_dict(json.loads(line), evo.dims)
            evo.db.records[rec.id] = rec
        evo.db.cells = json.loads(cells_text)
        state = json.loads(state_text)
        evo.generation = state["generation"]
        evo.next_id = state["next_id"]
        evo.islands = [Island.from_dict(d) for d in state["islands"]]
        evo.db.islands = evo.islands
        evo.rngs = []
        for s in state["rng_states"]:
            bg = np.random.PCG64()
            bg.state = s
            evo.rngs.append(np.random.Generator(bg))
        # drop anything written after the checkpoint
        _truncate_lines(evo.candidates_path, count)
        _truncate_lines(evo.events_path, manifest["event_count"])
        return evo


def _file_prefix_hash(path: Path, n_lines: int) -> str:
    h = hashlib.sha256()
    if path.exists():
        with path.open("rb") as fh:
            for i, line in enumerate(fh):
                if i >= n_lines:
                    break
                h.update(line)
    return h.hexdigest()


def _line_count(path: Path) -> int:
    if not path.exists():
        return 0
    with path.open("rb") as fh:
        return sum(1 for _ in fh)


def _truncate_lines(path: Path, n_lines: int) -> None:
    if not path.exists():
        return
    with path.open("rb") as fh:
        lines = fh.readlines()[:n_lines]
    path.write_bytes(b"".join(lines))


def latest_checkpoint(run_dir: str | Path) -> Path | None:
    folder = Path(run_dir) / CHECKPOINT_DIR
    found = sorted(p for p in folder.glob("gen_*") if (p / "manifest.json").exists())
    return found[-1] if found else None


def load_database(checkpoint_or_run: str | Path, config: RunConfig | None = None) -> EvolutionaryDatabase:
    """Rebuild a database from a checkpoint (or a run directory's latest one) without a universe."""
    path = Path(checkpoint_or_run)
    if not (path / "manifest.json").exists():
        latest = latest_checkpoint(path)
        if latest is None:
            raise CorruptCheckpoint(f"no checkpoint under {path}")
        path = latest
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    dims = [FeatureDimension.from_dict(d) for d in manifest["dimensions"]]
    db = EvolutionaryDatabase(dims)
    cand = path.parent.parent / CANDIDATES_FILE
    count = manifest["candidate_count"]
    if _file_prefix_hash(cand, count) != manifest["candidates_sha256"]:
        raise CorruptCheckpoint("candidate log does not match the checkpoint manifest")
    with cand.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if i >= count:
                break
            rec = CandidateRecord.from_dict(json.loads(line), dims)
            db.records[rec.id] = rec
    db.cells = json.loads((path / "cells.json").read_text(encoding="utf-8"))
    state = json.loads((path / "state.json").read_text(encoding="utf-8"))
    db.islands = [Island.from_dict(d) for d in state["islands"]]
    return db


# ---- entry points ---------------------------------------------------------------

def run_evolution(config: RunConfig, resume: str | Path | None = None, stop_after: int | None = None,
                  universe: Universe | None = None, generator=None,
                  on_generation: Callable[[Evolution], None] | None = None) -> Evolution:
    """Seed the islands (or resume from a checkpoint) and evolve up to ``config.generations``.

    Only the training slice of the universe is handed to the loop. ``stop_after``
    ends the run early at that generation, as an interruption would.
    """
    universe = universe if universe is not None else load_universe(config)
    train, _, _ = split_periods(universe, config.splits.build())
    if resume is not None:
        evo = Evolution.resume(config, resume, train, generator)
    else:
        evo = Evolution(config, train, generator)
        evo.initialize()
    if on_generation:
        on_generation(evo)
    last = config.generations if stop_after is None else min(stop_after, config.generations)
    while evo.generation < last:
        evo.step()
        if on_generation:
            on_generation(evo)
    return evo


@dataclass
class Selection:
    record: CandidateRecord
    valid_metrics: MetricSet
    test_metrics: MetricSet | None
    test_report: BacktestReport | None
    ranking: list[tuple[str, float]]


def select_best_on_validation(db: EvolutionaryDatabase, config: RunConfig, valid: Universe,
                              test: Universe | None = None) -> Selection:
    """Re-run every cell occupant on the validation slice and keep the best combined score."""
    if not len(db):
        raise ValueError("database is empty")
    ev = Evaluator(valid, config)
    ranking = []
    scored = {}
    for rec in db.elites():
        metrics, _, _ = ev.score(rec.program)
        s = score_or_fail(metrics)
        scored[rec.id] = metrics
        ranking.append((rec, s))
    ranking.sort(key=lambda rs: (-rs[1], rs[0].generation, rs[0].id))
    if not ranking or not math.isfinite(ranking[0][1]):
        raise NoValidCandidate("no candidate has valid metrics on the validation slice")
    best = ranking[0][0]
    test_metrics = test_report = None
    if test is not None:
        tev = Evaluator(test, config)
        test_metrics, _, test_report = tev.score(best.program)
    return Selection(best, scored[best.id], test_metrics, test_report,
                     [(r.id, _finite(s)) for r, s in ranking])


__all__ = ["CorruptCheckpoint", "ConfigMismatch", "NoValidCandidate", "Evaluator", "Evolution",
           "Selection", "run_evolution", "select_best_on_validation", "load_database",
           "latest_checkpoint", "benchmark_program", "make_generator", "load_universe"]
