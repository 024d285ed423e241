"""Offline generator: random structural edits on the parent program.

Deterministic given (context, rng state). Every offspring parses and
satisfies the program invariants by construction.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..dsl import IndicatorSpec, Program, Rebalance, Sizing, parse_program
from ..dsl.program import (CALENDAR_FIELDS, COMPARE_FLIP, DEFAULT_PARAM_BOUNDS, Arith, Bool, Compare,
                           Expr, Field, If, Logic, Neg, Not, Num, Ref, refs, serialize)
from .base import (GenerationContext, GeneratorOutcome, Hypothesis, Insight, categorize,
                   template_analysis)

MAX_INDICATORS = 8

# (kind, params, source, condition template, exit template); {n} is the indicator name
SNIPPETS = (
    ("sma", (50,), "close", "close > {n}", "close < {n}"),
    ("ema", (20,), "close", "close > {n}", "close < {n}"),
    ("momentum", (20,), "close", "{n} > 0", "{n} < 0"),
    ("macd_hist", (12, 26, 9), "close", "{n} > 0", "{n} < 0"),
    ("rsi", (14,), "close", "{n} < 70", "{n} > 80"),
    ("bollinger_z", (20,), "close", "{n} < 1.5", "{n} > 2"),
    ("stochastic_kdj", (14, 3), "close", "{n}.k < 80", "{n}.k > 90"),
    ("rolling_vol", (20,), "close", "{n} < 0.03", "{n} > 0.05"),
    ("highest", (20,), "close", "close >= {n}", "close < {n} * 0.9"),
    ("lowest", (20,), "close", "close > {n} * 1.05", "close <= {n}"),
    ("rel_momentum", (20,), "close", "{n} > 0", "{n} < -0.05"),
    ("sma", (20,), "volume", "volume > {n}", "volume < {n} * 0.5"),
)
CALENDAR_SNIPPETS = (("day_of_week != 0", "day_of_week == 4"), ("month != 9", "month == 9"),
                     ("day_of_month <= 20", "day_of_month > 25"))

OPS = ("jitter", "rule_edit", "structural", "crossover", "sizing")
OP_WEIGHTS = np.array([0.3, 0.2, 0.2, 0.15, 0.15])


def _round_sig(x: float, digits: int = 4) -> float:
    if x == 0 or not math.isfinite(x):
        return 0.0
    return float(f"{x:.{digits}g}")


def _paths(node: Expr, path=()):
    """Yield (path, node) for every subexpression; a path is a tuple of attribute names."""
    yield path, node
    if isinstance(node, (Neg, Not)):
        yield from _paths(node.operand, path + ("operand",))
    elif isinstance(node, (Arith, Compare, Logic)):
        yield from _paths(node.left, path + ("left",))
        yield from _paths(node.right, path + ("right",))
    elif isinstance(node, If):
        for attr in ("cond", "then", "other"):
            yield from _paths(getattr(node, attr), path + (attr,))


def _replace_at(node: Expr, path: tuple, new: Expr) -> Expr:
    if not path:
        return new
    head, rest = path[0], path[1:]
    return replace(node, **{head: _replace_at(getattr(node, head), rest, new)})


def _rename(node: Expr, mapping: dict[str, str]) -> Expr:
    if isinstance(node, Ref):
        return Ref(mapping.get(node.name, node.name), node.output)
    if isinstance(node, (Neg, Not)):
        return replace(node, operand=_rename(node.operand, mapping))
    if isinstance(node, (Arith, Compare, Logic)):
        return replace(node, left=_rename(node.left, mapping), right=_rename(node.right, mapping))
    if isinstance(node, If):
        return If(_rename(node.cond, mapping), _rename(node.then, mapping), _rename(node.other, mapping))
    return node


def _cond(text: str, name: str | None = None) -> Expr:
    """Parse a single boolean condition through the real parser, so snippets stay valid."""
    decl = ""
    if name is not None:
        decl = f"indicator {name} = sma(1)\n"
    src = f"program snippet\n{decl}entry: {text.format(n=name)}\nexit: false\n"
    prog = _parse_loose(src)
    return prog.entry


def _parse_loose(src: str) -> Program:
    # snippet indicators are placeholders; outputs like ".k" must be accepted
    try:
        return parse_program(src)
    except Exception:
        return parse_program(src.replace("sma(1)", "stochastic_kdj(1, 1)"))


def _prune(program: Program) -> Program:
    used = program.referenced()
    return replace(program, indicators=tuple((n, s) for n, s in program.indicators if n in used))


def _fresh_name(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    i = 2
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


class MutationalGenerator:
    """Deterministic stand-in for the LLM agents."""

    def __init__(self, taxonomy=None, param_bounds: dict | None = None, kind_table: dict | None = None):
        self.taxonomy = tuple(taxonomy) if taxonomy is not None else None
        self.param_bounds = param_bounds or {}
        self.kind_table = kind_table

    # -- contract --------------------------------------------------------------

    def propose(self, context: GenerationContext, rng: np.random.Generator) -> GeneratorOutcome:
        parent = context.parent.program
        taxonomy = context.taxonomy if self.taxonomy is None else self.taxonomy
        cousins = [c.program for c in context.cousins]
        parent_text = serialize(replace(parent, name="x"))
        for _ in range(25):
            op = OPS[int(rng.choice(len(OPS), p=OP_WEIGHTS))]
            child, note = self._apply(op, parent, cousins, rng)
            if child is None:
                continue
            child = _prune(child)
            child = replace(child, name=f"i{context.island_id}_g{context.generation}",
                            tags=categorize(child, taxonomy, self.kind_table))
            text = serialize(child)
            if serialize(replace(child, name="x")) == parent_text:
                continue
            program = parse_program(text, param_bounds=self.param_bounds)
            return GeneratorOutcome(self._hypothesis(op, note, parent, program), program, 0, [], note)
        # always-changing fallback: toggle the trailing stop
        child = replace(parent, trailing_stop=None if parent.trailing_stop else 0.1,
                        name=f"i{context.island_id}_g{context.generation}")
        child = replace(child, tags=categorize(child, taxonomy, self.kind_table))
        note = "sizing: toggled trailing stop"
        program = parse_program(serialize(child), param_bounds=self.param_bounds)
        return GeneratorOutcome(self._hypothesis("sizing", note, parent, program), program, 0, [], note)

    def mutational_propose(self, context: GenerationContext, rng: np.random.Generator) -> GeneratorOutcome:
        return self.propose(context, rng)

    def analyze(self, candidate, parent, outcome=None) -> tuple[dict, str]:
        return template_analysis(candidate, parent, outcome.edit if outcome is not None else "")

    def consolidate(self, insights: list[Insight]) -> str | None:
        return None

    # -- edits -----------------------------------------------------------------

    def _apply(self, op: str, p: Program, cousins: list[Program], rng):
        if op == "jitter":
            return self._jitter(p, rng)
        if op == "rule_edit":
            return self._rule_edit(p, rng)
        if op == "structural":
            if len(p.indicators) >= MAX_INDICATORS or (p.indicators and rng.random() < 0.35):
                out = self._remove(p, rng)
                if out[0] is not None:
                    return out
            return self._add(p, rng)
        if op == "crossover":
            return self._crossover(p, cousins, rng)
        return self._toggle(p, rng)

    def _bounds(self, kind: str) -> tuple[int, int]:
        lo, hi = self.param_bounds.get(kind, DEFAULT_PARAM_BOUNDS)
        if kind in ("bollinger_z", "rolling_vol"):
            lo = max(lo, 2)
        return lo, hi

    def _jitter(self, p: Program, rng):
        candidates = [(i, k) for i, (_, s) in enumerate(p.indicators) for k in range(len(s.params))]
        if p.sizing.kind == "inverse_volatility":
            candidates.append((-1, 0))
        if not candidates:
            return None, ""
        i, k = candidates[int(rng.integers(len(candidates)))]
        if i == -1:
            old, kind = p.sizing.lookback, "rolling_vol"
        else:
            name, spec = p.indicators[i]
            old, kind = spec.params[k], spec.kind
        lo, hi = self._bounds(kind)
        step = max(1, math.floor(0.25 * old))
        delta = int(rng.integers(1, step + 1)) * (1 if rng.random() < 0.5 else -1)
        new = min(max(old + delta, lo), hi)
        if new == old:
            new = min(max(old - delta, lo), hi)
        if new == old:
            return None, ""
        if i == -1:
            return replace(p, sizing=replace(p.sizing, lookback=new)), \
                f"jitter: inverse_volatility lookback {old} -> {new}"
        params = list(spec.params)
        params[k] = new
        indicators = list(p.indicators)
        indicators[i] = (name, replace(spec, params=tuple(params)))
        return replace(p, indicators=tuple(indicators)), f"jitter: {name} parameter {old} -> {new}"

    def _rule_edit(self, p: Program, rng):
        sites = []
        for rule in ("entry", "exit"):
            for path, node in _paths(getattr(p, rule)):
                if isinstance(node, Compare):
                    sites.append((rule, path, node))
        if not sites:
            return None, ""
        rule, path, node = sites[int(rng.integers(len(sites)))]
        nums = [(side, getattr(node, side)) for side in ("left", "right")
                if isinstance(getattr(node, side), Num)]
        if nums and rng.random() < 0.7:
            side, num = nums[int(rng.integers(len(nums)))]
            other = node.right if side == "left" else node.left
            if isinstance(other, Field) and other.name in CALENDAR_FIELDS:
                new_val = float(num.value + (1 if rng.random() < 0.5 else -1))
            elif num.value == 0:
                new_val = 0.01 * int(rng.integers(1, 6)) * (1 if rng.random() < 0.5 else -1)
            else:
                factor = 1 + rng.uniform(0.05, 0.25) * (1 if rng.random() < 0.5 else -1)
                new_val = _round_sig(num.value * factor)
            if new_val == num.value:
                return None, ""
            new_node = replace(node, **{side: Num(new_val)})
            note = f"rule_edit: {rule} threshold {num.value:g} -> {new_val:g}"
        else:
            new_node = replace(node, op=COMPARE_FLIP[node.op])
            note = f"rule_edit: {rule} comparison {node.op} -> {new_node.op}"
        return replace(p, **{rule: _replace_at(getattr(p, rule), path, new_node)}), note

    def _add(self, p: Program, rng):
        taken = {n for n, _ in p.indicators}
        if rng.random() < 0.15:
            cond, exit_cond = CALENDAR_SNIPPETS[int(rng.integers(len(CALENDAR_SNIPPETS)))]
            entry = Logic("and", p.entry, _cond(cond))
            return replace(p, entry=entry), f"structural: added calendar filter '{cond}'"
        kind, params, source, cond, exit_cond = SNIPPETS[int(rng.integers(len(SNIPPETS)))]
        lo, hi = self._bounds(kind)
        params = tuple(min(max(int(round(v * rng.uniform(0.75, 1.25))), lo), hi) for v in params)
        base = kind if source == "close" else f"{kind}_{source}"
        name = _fresh_name(f"{base}{params[0]}", taken)
        spec = IndicatorSpec(kind, params, source)
        indicators = p.indicators + ((name, spec),)
        if rng.random() < 0.7:
            new_entry = _cond(cond, name)
            entry = new_entry if _is_trivial(p.entry) else Logic("and", p.entry, new_entry)
            return replace(p, indicators=indicators, entry=entry), \
                f"structural: added entry filter {kind}{list(params)} ({cond.format(n=name)})"
        new_exit = _cond(exit_cond, name)
        exit_ = new_exit if _is_false(p.exit) else Logic("or", p.exit, new_exit)
        return replace(p, indicators=indicators, exit=exit_), \
            f"structural: added exit trigger {kind}{list(params)} ({exit_cond.format(n=name)})"

    def _remove(self, p: Program, rng):
        for rule in ("entry", "exit") if rng.random() < 0.5 else ("exit", "entry"):
            node = getattr(p, rule)
            if isinstance(node, Logic):
                keep = node.left if rng.random() < 0.5 else node.right
                return replace(p, **{rule: keep}), f"structural: simplified {rule} to a single branch"
        return None, ""

    def _crossover(self, p: Program, cousins: list[Program], rng):
        donors = [c for c in cousins if any(isinstance(n, Compare) for _, n in _paths(c.entry))]
        if not donors:
            return None, ""
        donor = donors[int(rng.integers(len(donors)))]
        subtrees = [n for _, n in _paths(donor.entry) if isinstance(n, Compare)]
        graft = subtrees[int(rng.integers(len(subtrees)))]
        taken = {n for n, _ in p.indicators}
        donor_specs = donor.indicator_map
        mapping, extra = {}, []
        for name in sorted(refs(graft)):
            spec = donor_specs[name]
            existing = next((n for n, s in p.indicators if s == spec), None)
            if existing is not None:
                mapping[name] = existing
                continue
            new_name = _fresh_name(name, taken | {e for e, _ in extra})
            mapping[name] = new_name
            extra.append((new_name, spec))
        if len(p.indicators) + len(extra) > MAX_INDICATORS:
            return None, ""
        graft = _rename(graft, mapping)
        if _is_trivial(p.entry) or rng.random() < 0.25:
            entry = graft
        else:
            entry = Logic("and", p.entry, graft)
        return replace(p, indicators=p.indicators + tuple(extra), entry=entry), \
            f"crossover: grafted entry condition from cousin {donor.name}"

    def _toggle(self, p: Program, rng):
        choice = int(rng.integers(4))
        if choice == 0:
            options = [Sizing("equal_weight"),
                       Sizing("inverse_volatility", lookback=int(rng.integers(20, 121))),
                       Sizing("fixed_fraction", fraction=_round_sig(rng.uniform(0.1, 0.5), 2))]
            options = [o for o in options if o.kind != p.sizing.kind]
            new = options[int(rng.integers(len(options)))]
            return replace(p, sizing=new), f"sizing: {p.sizing.kind} -> {new.kind}"
        if choice == 1:
            stop = None if p.trailing_stop else _round_sig(rng.uniform(0.05, 0.2), 2)
            return replace(p, trailing_stop=stop), f"risk: trailing stop -> {stop}"
        if choice == 2:
            cap = None if p.max_weight else _round_sig(rng.uniform(0.3, 0.8), 2)
            return replace(p, max_weight=cap), f"risk: max position weight -> {cap}"
        options = [Rebalance("daily"), Rebalance("every_n_days", int(rng.integers(2, 11))),
                   Rebalance("monthly")]
        options = [o for o in options if o != p.rebalance and not
                   (o.kind == p.rebalance.kind == "every_n_days")]
        new = options[int(rng.integers(len(options)))]
        return replace(p, rebalance=new), f"rebalance: {p.rebalance.kind} -> {new.kind}"

    def _hypothesis(self, op: str, note: str, parent: Program, child: Program) -> Hypothesis:
        tags = ", ".join(child.tags) or "uncategorized"
        return Hypothesis(
            hypothesis=f"Applying '{note}' to {parent.name} improves the combined score.",
            rationale=f"A {op} edit probes a neighbouring strategy; the offspring is tagged {tags}.",
            objectives="Raise Sharpe and information ratio without deepening the maximum drawdown.",
            expected_insights=f"Whether the {op} edit direction is productive for this niche.",
            risks_limitations="Single in-sample backtest; improvement may be noise or overfit.",
            experimentation_ideas="Repeat the edit with a different magnitude or combine with a cousin's rule.",
        )


def _is_trivial(node: Expr) -> bool:
    return isinstance(node, Bool) and node.value is True


def _is_false(node: Expr) -> bool:
    return isinstance(node, Bool) and node.value is False


__all__ = ["MutationalGenerator", "SNIPPETS"]
