"""Parser for the line-oriented strategy language.

A program is a sequence of ``key value`` lines; lines that start with
whitespace continue the previous line and ``#`` starts a comment.
"""

from __future__ import annotations

import re
from typing import Mapping, Sequence

from .errors import (DslSyntaxError, ParamOutOfRange, UnboundReference, UnknownCategory,
                     UnknownIndicator)
from .program import (DEFAULT_PARAM_BOUNDS, FALLBACKS, FIELDS,
                      INDICATOR_ARITY, KEYWORDS, MULTI_OUTPUT, REBALANCE_KINDS, SIZING_KINDS,
                      SOURCES, Arith, Bool, Compare, Expr, Field, If, IndicatorSpec, Logic, Neg,
                      Not, Num, Program, Rebalance, Ref, Sizing, is_boolean)

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)?)
  | (?P<op><=|>=|==|!=|[<>+\-*/(),:=])
""", re.VERBOSE)

STD_KINDS = ("bollinger_z", "rolling_vol")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_CMP = ("<", "<=", ">", ">=", "==", "!=")


class _Tokens:
    def __init__(self, text: str, line: int, col0: int):
        self.line = line
        self.items: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos + 1)
            if m.lastgroup != "ws":
                self.items.append((m.lastgroup, m.group(), col0 + pos + 1))
            pos = m.end()
        self.i = 0
        self.end_col = col0 + len(text) + 1

    def peek(self, k: int = 0):
        j = self.i + k
        return self.items[j] if j < len(self.items) else ("eof", "", self.end_col)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, col = self.next()
        if val != value:
            shown = val or "end of line"
            raise DslSyntaxError(f"expected {value!r}, found {shown!r}", self.line, col)
        return col

    def error(self, msg: str, col: int | None = None):
        return DslSyntaxError(msg, self.line, col if col is not None else self.peek()[2])

    def done(self):
        kind, val, col = self.peek()
        if kind != "eof":
            raise DslSyntaxError(f"unexpected trailing {val!r}", self.line, col)


class _ExprParser:
    """Recursive descent with inline type checking. Every method returns (node, col)."""

    def __init__(self, toks: _Tokens, refs: list):
        self.t = toks
        self.refs = refs

    def parse(self, want_bool: bool | None):
        node, col = self.or_expr()
        self.t.done()
        self._want(node, col, want_bool)
        return node

    def _want(self, node, col, want_bool):
        if want_bool is None:
            return
        if want_bool and not is_boolean(node):
            raise self.t.error("expected a boolean condition", col)
        if not want_bool and is_boolean(node):
            raise self.t.error("expected a numeric expression", col)

    def or_expr(self):
        left, col = self.and_expr()
        while self.t.peek()[1] == "or":
            self.t.next()
            right, rcol = self.and_expr()
            self._want(left, col, True)
            self._want(right, rcol, True)
            left = Logic("or", left, right)
        return left, col

    def and_expr(self):
        left, col = self.not_expr()
        while self.t.peek()[1] == "and":
            self.t.next()
            right, rcol = self.not_expr()
            self._want(left, col, True)
            self._want(right, rcol, True)
            left = Logic("and", left, right)
        return left, col

    def not_expr(self):
        kind, val, col = self.t.peek()
        if val == "not":
            self.t.next()
            operand, ocol = self.not_expr()
            self._want(operand, ocol, True)
            return Not(operand), col
        return self.cmp()

    def cmp(self):
        left, col = self.add()
        if self.t.peek()[1] in _CMP:
            op = self.t.next()[1]
            right, rcol = self.add()
            self._want(left, col, False)
            self._want(right, rcol, False)
            if self.t.peek()[1] in _CMP:
                raise self.t.error("comparisons cannot be chained; use 'and'")
            return Compare(op, left, right), col
        return left, col

    def add(self):
        left, col = self.mul()
        while self.t.peek()[1] in ("+", "-"):
            op = self.t.next()[1]
            right, rcol = self.mul()
            self._want(left, col, False)
            self._want(right, rcol, False)
            left = Arith(op, left, right)
        return left, col

    def mul(self):
        left, col = self.unary()
        while self.t.peek()[1] in ("*", "/"):
            op = self.t.next()[1]
            right, rcol = self.unary()
            self._want(left, col, False)
            self._want(right, rcol, False)
            left = Arith(op, left, right)
        return left, col

    def unary(self):
        kind, val, col = self.t.peek()
        if val == "-":
            self.t.next()
            nk, nv, _ = self.t.peek()
            if nk == "num":
                self.t.next()
                return Num(-float(nv)), col
            operand, ocol = self.unary()
            self._want(operand, ocol, False)
            return Neg(operand), col
        return self.primary()

    def primary(self):
        kind, val, col = self.t.next()
        if kind == "num":
            return Num(float(val)), col
        if val == "(":
            node, _ = self.or_expr()
            self.t.expect(")")
            return node, col
        if val in ("true", "false"):
            return Bool(val == "true"), col
        if val == "if":
            self.t.expect("(")
            cond, ccol = self.or_expr()
            self._want(cond, ccol, True)
            self.t.expect(",")
            then, tcol = self.or_expr()
            self.t.expect(",")
            other, ocol = self.or_expr()
            self.t.expect(")")
            if is_boolean(then) != is_boolean(other):
                raise self.t.error("if() branches must have the same type", ocol)
            return If(cond, then, other), col
        if kind == "ident":
            if val in KEYWORDS:
                raise self.t.error(f"unexpected keyword {val!r}", col)
            if val in FIELDS:
                return Field(val), col
            name, _, output = val.partition(".")
            self.refs.append((name, output or None, self.t.line, col))
            return Ref(name, output or None), col
        shown = val or "end of line"
        raise self.t.error(f"unexpected {shown!r}", col)


def _logical_lines(text: str):
    """Yield (line_no, col_offset, content) with continuation lines merged."""
    out: list[list] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if raw[:1].isspace() and out:
            out[-1][2] += " " + line.strip()
            continue
        out.append([no, 0, line])
    return out


def _int_args(toks: _Tokens, lineno: int) -> tuple[list[tuple[int, int]], str | None]:
    """Parse ``(int, int, ..., [source])``; returns (value, col) pairs and an optional source."""
    toks.expect("(")
    args: list[tuple[int, int]] = []
    source = None
    while True:
        kind, val, col = toks.next()
        if kind == "num":
            if not re.fullmatch(r"\d+", val):
                raise DslSyntaxError(f"indicator parameters must be integers, got {val}", lineno, col)
            args.append((int(val), col))
        elif val == "-" and toks.peek()[0] == "num":
            _, nv, _ = toks.next()
            args.append((-int(float(nv)), col))
        elif kind == "ident" and val in SOURCES and source is None:
            source = val
        else:
            raise DslSyntaxError(f"bad indicator argument {val or 'end of line'!r}", lineno, col)
        sep = toks.next()
        if sep[1] == ")":
            break
        if sep[1] != ",":
            raise DslSyntaxError("expected ',' or ')'", lineno, sep[2])
    return args, source


def _number(toks: _Tokens) -> float:
    sign = 1.0
    if toks.peek()[1] == "-":
        toks.next()
        sign = -1.0
    kind, val, col = toks.next()
    if kind != "num":
        raise toks.error(f"expected a number, found {val or 'end of line'!r}", col)
    return sign * float(val)


def parse_program(text: str, taxonomy: Sequence[str] | None = None,
                  param_bounds: Mapping[str, tuple[int, int]] | None = None) -> Program:
    """Parse and validate a program.

    ``taxonomy`` restricts the allowed tags; ``param_bounds`` maps an
    indicator kind to inclusive (low, high) bounds for its parameters.
    """
    param_bounds = param_bounds or {}
    fields: dict = {}
    indicators: list[tuple[str, IndicatorSpec]] = []
    ref_sites: list = []
    seen_keys: dict[str, int] = {}

    for lineno, _, line in _logical_lines(text):
        m = re.match(r"\s*([A-Za-z_]+)\s*:?", line)
        if not m:
            raise DslSyntaxError("expected a keyword", lineno, 1)
        key = m.group(1)
        rest_col = m.end()
        rest = line[rest_col:]
        if key != "indicator":
            if key in seen_keys:
                raise DslSyntaxError(f"duplicate '{key}' (first on line {seen_keys[key]})", lineno, 1)
            seen_keys[key] = lineno
        toks = _Tokens(rest, lineno, rest_col)

        if key == "program":
            name = rest.strip()
            if not _NAME.match(name):
                raise DslSyntaxError(f"bad program name {name!r}", lineno, rest_col + 1)
            fields["name"] = name
        elif key == "tags":
            tags = [t.strip() for t in rest.split(",")] if rest.strip() else []
            for t in tags:
                if not _NAME.match(t):
                    raise DslSyntaxError(f"bad tag {t!r}", lineno, rest_col + 1)
            if len(set(tags)) != len(tags):
                raise DslSyntaxError("duplicate tag", lineno, rest_col + 1)
            if taxonomy is not None:
                unknown = [t for t in tags if t not in taxonomy]
                if unknown:
                    raise UnknownCategory(
                        f"tags {unknown} are not in the taxonomy {list(taxonomy)}", lineno, rest_col + 1)
            fields["tags"] = tuple(tags)
        elif key == "indicator":
            kind, name, col = toks.next()
            if kind != "ident" or "." in name:
                raise DslSyntaxError("expected an indicator name", lineno, col)
            if name in KEYWORDS or name in FIELDS:
                raise DslSyntaxError(f"{name!r} is reserved", lineno, col)
            if any(n == name for n, _ in indicators):
                raise DslSyntaxError(f"indicator {name!r} declared twice", lineno, col)
            toks.expect("=")
            kkind, ind_kind, kcol = toks.next()
            if kkind != "ident":
                raise DslSyntaxError("expected an indicator kind", lineno, kcol)
            if ind_kind not in INDICATOR_ARITY:
                raise UnknownIndicator(
                    f"unknown indicator kind {ind_kind!r}; known: {sorted(INDICATOR_ARITY)}", lineno, kcol)
            args, source = _int_args(toks, lineno)
            toks.done()
            if len(args) != INDICATOR_ARITY[ind_kind]:
                raise DslSyntaxError(
                    f"{ind_kind} takes {INDICATOR_ARITY[ind_kind]} integer parameter(s), got {len(args)}",
                    lineno, kcol)
            if ind_kind == "stochastic_kdj" and source not in (None, "close"):
                raise DslSyntaxError("stochastic_kdj always reads high/low/close", lineno, kcol)
            lo, hi = param_bounds.get(ind_kind, DEFAULT_PARAM_BOUNDS)
            if ind_kind in STD_KINDS:
                lo = max(lo, 2)  # a sample std needs two observations
            for value, col in args:
                if not lo <= value <= hi:
                    raise ParamOutOfRange(
                        f"{ind_kind} parameter {value} outside [{lo}, {hi}]", lineno, col)
            indicators.append((name, IndicatorSpec(ind_kind, tuple(v for v, _ in args), source or "close")))
        elif key in ("entry", "exit", "short_entry", "short_exit"):
            fields[key] = _ExprParser(toks, ref_sites).parse(want_bool=True)
        elif key == "sizing":
            fields["sizing"] = _parse_sizing(toks, ref_sites, lineno)
        elif key in ("trailing_stop", "max_weight"):
            v = _number(toks)
            toks.done()
            ok = 0 < v < 1 if key == "trailing_stop" else 0 < v <= 1
            if not ok:
                bound = "(0, 1)" if key == "trailing_stop" else "(0, 1]"
                raise ParamOutOfRange(f"{key} {v} outside {bound}", lineno, rest_col + 1)
            fields[key] = v
        elif key == "rebalance":
            kind, val, col = toks.next()
            if val not in REBALANCE_KINDS:
                raise DslSyntaxError(f"rebalance must be one of {REBALANCE_KINDS}", lineno, col)
            n = None
            if val == "every_n_days":
                toks.expect("(")
                n = _number(toks)
                toks.expect(")")
                if n != int(n) or n < 1:
                    raise ParamOutOfRange(f"every_n_days needs an integer >= 1, got {n}", lineno, col)
                n = int(n)
            toks.done()
            fields["rebalance"] = Rebalance(val, n)
        elif key == "fallback":
            kind, val, col = toks.next()
            if val not in FALLBACKS:
                raise DslSyntaxError(f"fallback must be one of {FALLBACKS}", lineno, col)
            toks.done()
            fields["fallback"] = val
        else:
            raise DslSyntaxError(f"unknown keyword {key!r}", lineno, 1)

    for required in ("name", "entry", "exit"):
        if required not in fields:
            key = "program" if required == "name" else required
            raise DslSyntaxError(f"missing required line '{key}'", None, None)
    fields.setdefault("tags", ())

    declared = dict(indicators)
    for name, output, line, col in ref_sites:
        if name not in declared:
            raise UnboundReference(f"{name!r} is not a declared indicator", line, col)
        outs = MULTI_OUTPUT.get(declared[name].kind)
        if outs and output not in outs:
            raise UnboundReference(f"{name!r} needs one of the outputs {['.' + o for o in outs]}", line, col)
        if not outs and output is not None:
            raise UnboundReference(f"{name!r} has no output {output!r}", line, col)
    return Program(indicators=tuple(indicators), **fields)


def _parse_sizing(toks: _Tokens, ref_sites: list, lineno: int) -> Sizing:
    kind, val, col = toks.next()
    if val not in SIZING_KINDS:
        raise DslSyntaxError(f"sizing must be one of {SIZING_KINDS}", lineno, col)
    if val == "equal_weight":
        toks.done()
        return Sizing("equal_weight")
    toks.expect("(")
    if val == "inverse_volatility":
        n = _number(toks)
        toks.expect(")")
        toks.done()
        if n != int(n) or not 2 <= n <= DEFAULT_PARAM_BOUNDS[1]:
            raise ParamOutOfRange(f"inverse_volatility lookback {n} outside [2, {DEFAULT_PARAM_BOUNDS[1]}]",
                                  lineno, col)
        return Sizing("inverse_volatility", lookback=int(n))
    if val == "fixed_fraction":
        f = _number(toks)
        toks.expect(")")
        toks.done()
        if not 0 <= f <= 1:
            raise ParamOutOfRange(f"fixed_fraction {f} outside [0, 1]", lineno, col)
        return Sizing("fixed_fraction", fraction=f)
    if val == "market_cap":
        shares = []
        while True:
            sk, sym, scol = toks.next()
            if sk != "ident":
                raise DslSyntaxError("expected SYMBOL: shares", lineno, scol)
            toks.expect(":")
            n = _number(toks)
            if n <= 0:
                raise ParamOutOfRange(f"share count for {sym} must be positive", lineno, scol)
            shares.append((sym, n))
            sep = toks.next()
            if sep[1] == ")":
                break
            if sep[1] != ",":
                raise DslSyntaxError("expected ',' or ')'", lineno, sep[2])
        toks.done()
        return Sizing("market_cap", shares=tuple(shares))
    # signal_proportional(expr)
    p = _ExprParser(toks, ref_sites)
    expr, ecol = p.or_expr()
    p._want(expr, ecol, False)
    toks.expect(")")
    toks.done()
    return Sizing("signal_proportional", expr=expr)


__all__ = ["parse_program"]
