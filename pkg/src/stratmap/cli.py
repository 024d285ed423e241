"""Command line entry points. Exit codes: 0 ok, 1 usage or input error, 2 fatal runtime error."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .backtester import write_equity_csv, write_report_json
from .config import ConfigError, RunConfig, load_config
from .dsl import BASELINE_KINDS, DslError, builtin_baseline, parse_program
from .feature_map import COLOR_METRICS, UnknownDimension, export_projection, map_stats, write_projection_csv
from .market_data import MarketDataError, split_periods
from .metrics import MetricSet
from .orchestrator import (ConfigMismatch, CorruptCheckpoint, Evaluator, NoValidCandidate,
                           load_database, load_universe, run_evolution, select_best_on_validation)

EXIT_OK, EXIT_INPUT, EXIT_FATAL = 0, 1, 2
TABLE_COLUMNS = ("SR", "SOR", "IR", "MDD", "CR", "trades", "score")
BASELINE_COLUMNS = ("SR", "MDD", "IR", "CR")


class InputError(Exception):
    pass


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    if isinstance(v, int):
        return str(v)
    return f"{v:.4f}"


def metric_row(m: MetricSet | None) -> dict:
    if m is None:
        return {c: None for c in TABLE_COLUMNS}
    score = m.get("score") if m.valid else None
    return {"SR": m.sharpe, "SOR": m.sortino, "IR": m.information_ratio, "MDD": m.max_drawdown,
            "CR": m.cumulative_return, "trades": m.num_transactions, "score": score}


def print_table(rows: list[tuple[str, dict]], columns, out=None) -> None:
    out = out or sys.stdout
    width = max([len("strategy")] + [len(name) for name, _ in rows])
    print("strategy".ljust(width) + "".join(c.rjust(12) for c in columns), file=out)
    for name, row in rows:
        print(name.ljust(width) + "".join(_fmt(row[c]).rjust(12) for c in columns), file=out)


def _config(args, **overrides) -> RunConfig:
    if not args.config:
        raise InputError("--config is required")
    return load_config(args.config, **overrides)


def _view(config: RunConfig, split: str):
    train, valid, test = split_periods(load_universe(config), config.splits.build())
    return {"train": train, "valid": valid, "test": test}[split]


def _load_program(ref: str, config: RunConfig):
    if ref.startswith("builtin:"):
        kind = ref.split(":", 1)[1]
        if kind not in BASELINE_KINDS:
            raise InputError(f"unknown builtin {kind!r}; choose from {', '.join(BASELINE_KINDS)}")
        return builtin_baseline(kind, config.market_cap_shares)
    path = Path(ref)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read program {path}: {exc}") from exc
    return parse_program(text, param_bounds=config.param_bounds)


# ---- commands ---------------------------------------------------------------

def cmd_evolve(args) -> int:
    config = _config(args)
    if args.generations is not None:
        config = config.model_copy(update={"generations": args.generations})

    def progress(evo):
        s = map_stats(evo.db)
        best = "n/a" if s["best_score"] is None else f"{s['best_score']:.4f}"
        print(f"generation {evo.generation:4d}  cells {s['filled']:5d}  coverage {s['coverage']:.3e}  "
              f"best {best}  archive {len(evo.db)}", flush=True)

    evo = run_evolution(config, resume=args.resume, on_generation=progress)
    print(f"run directory: {evo.run_dir}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    config = _config(args)
    if args.zero_cost:
        config = config.model_copy(update={"cost": config.cost.model_copy(update={"zero_cost": True})})
    program = _load_program(args.program, config)
    ev = Evaluator(_view(config, args.split), config)
    metrics, error, report = ev.score(program)
    print_table([(program.name, metric_row(metrics))], TABLE_COLUMNS)
    if error:
        print(f"note: {error}", file=sys.stderr)
    if report is not None:
        out = Path(args.out or f"{program.name}_{args.split}_equity.csv")
        write_equity_csv(report, out)
        if args.report:
            write_report_json(report, args.report)
        print(f"equity curve written to {out}")
    return EXIT_OK if report is not None else EXIT_INPUT


def cmd_baselines(args) -> int:
    config = _config(args)
    ev = Evaluator(_view(config, args.split), config)
    rows = []
    for kind in BASELINE_KINDS:
        if kind == "market_cap" and not config.market_cap_shares:
            print("market_cap skipped: config has no market_cap_shares", file=sys.stderr)
            continue
        metrics, error, _ = ev.score(builtin_baseline(kind, config.market_cap_shares))
        rows.append((kind, metric_row(metrics)))
        if error:
            print(f"{kind}: {error}", file=sys.stderr)
    print_table(rows, BASELINE_COLUMNS)
    if args.json:
        Path(args.json).write_text(json.dumps({k: v for k, v in rows}, indent=1), encoding="utf-8")
    return EXIT_OK


def cmd_inspect_map(args) -> int:
    dims = [d.strip() for d in args.dims.split(",")]
    if len(dims) != 2:
        raise InputError("--dims takes exactly two comma-separated names")
    if args.color not in COLOR_METRICS:
        raise InputError(f"unknown metric {args.color!r}; valid metrics: {', '.join(COLOR_METRICS)}")
    db = load_database(args.db)
    rows = export_projection(db, dims[0], dims[1], args.color)
    write_projection_csv(rows, dims[0], dims[1], args.color, args.out)
    stats = map_stats(db)
    best = max(db.elites(), key=lambda r: r.score, default=None)
    counts = {isl.id: len(isl.population) for isl in db.islands}
    print(f"coverage {stats['coverage']:.6e} ({stats['filled']} of {stats['total_cells']} cells)")
    if best is not None:
        print(f"best cell {best.feature_vector.key}: {best.id} score {best.score:.4f}")
    print("island sizes: " + ", ".join(f"{k}: {v}" for k, v in counts.items()))
    print(f"projection written to {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    config = _config(args)
    db = load_database(args.db or config.run_path)
    _, valid, test = split_periods(load_universe(config), config.splits.build())
    sel = select_best_on_validation(db, config, valid, test)
    print(f"selected {sel.record.id} (generation {sel.record.generation}, island {sel.record.island_id})")
    print_table([("valid", metric_row(sel.valid_metrics)), ("test", metric_row(sel.test_metrics))],
                TABLE_COLUMNS)
    if args.out:
        Path(args.out).write_text(sel.record.program_text, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stratmap", description="Quality-diversity strategy search.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evolve", help="run or resume an evolution")
    e.add_argument("--config", required=True)
    e.add_argument("--resume", help="checkpoint directory to continue from")
    e.add_argument("--generations", type=int, help="override the configured generation count")
    e.set_defaults(func=cmd_evolve)

    b = sub.add_parser("backtest", help="backtest one program on a split")
    b.add_argument("--program", required=True, help="program file or builtin:KIND")
    b.add_argument("--split", choices=("train", "valid", "test"), default="test")
    b.add_argument("--config", required=True)
    b.add_argument("--zero-cost", action="store_true", help="disable commission and slippage")
    b.add_argument("--out", help="equity CSV path")
    b.add_argument("--report", help="optional JSON report with fills")
    b.set_defaults(func=cmd_backtest)

    bl = sub.add_parser("baselines", help="run the reference strategies")
    bl.add_argument("--config", required=True)
    bl.add_argument("--split", choices=("train", "valid", "test"), default="test")
    bl.add_argument("--json", help="also write the rows as JSON")
    bl.set_defaults(func=cmd_baselines)

    m = sub.add_parser("inspect-map", help="export a two-dimensional projection of the map")
    m.add_argument("--db", required=True, help="run directory or checkpoint directory")
    m.add_argument("--dims", required=True, help="two dimension names, e.g. category,mdd")
    m.add_argument("--color", required=True, help="metric used to colour each cell")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_inspect_map)

    s = sub.add_parser("select", help="pick the best elite on the validation split")
    s.add_argument("--config", required=True)
    s.add_argument("--db", help="run or checkpoint directory (default: the config's run_dir)")
    s.add_argument("--out", help="write the selected program here")
    s.set_defaults(func=cmd_select)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DslError as exc:
        print(f"error: {exc.feedback()}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ConfigError, MarketDataError, UnknownDimension, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigMismatch, CorruptCheckpoint, NoValidCandidate) as exc:
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except KeyboardInterrupt:
        print("interrupted; resume from the latest checkpoint", file=sys.stderr)
        return EXIT_FATAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the fatal exit code
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
