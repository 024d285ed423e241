"""Program AST and its canonical text form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

# kind -> number of integer parameters
INDICATOR_ARITY = {
    "sma": 1,
    "ema": 1,
    "rsi": 1,
    "macd_hist": 3,
    "bollinger_z": 1,
    "stochastic_kdj": 2,
    "rolling_vol": 1,
    "momentum": 1,
    "highest": 1,
    "lowest": 1,
    "rel_momentum": 1,
}
MULTI_OUTPUT = {"stochastic_kdj": ("k", "d", "j")}
SOURCES = ("close", "open", "high", "low", "volume")
PRICE_FIELDS = SOURCES
CALENDAR_FIELDS = ("day_of_week", "day_of_month", "month")
FIELDS = PRICE_FIELDS + CALENDAR_FIELDS
KEYWORDS = ("and", "or", "not", "true", "false", "if")

SIZING_KINDS = ("equal_weight", "inverse_volatility", "fixed_fraction",
                "signal_proportional", "market_cap")
REBALANCE_KINDS = ("daily", "every_n_days", "monthly", "once")
FALLBACKS = ("cash", "equal_weight")

DEFAULT_PARAM_BOUNDS = (1, 252)


# ---- expression nodes -------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Bool:
    value: bool


@dataclass(frozen=True)
class Ref:
    name: str
    output: str | None = None


@dataclass(frozen=True)
class Field:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Arith:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # < <= > >= == !=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Logic:
    op: str  # and / or
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    other: "Expr"


Expr = Union[Num, Bool, Ref, Field, Neg, Arith, Compare, Logic, Not, If]

COMPARE_FLIP = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "==": "!=", "!=": "=="}


def is_boolean(node: Expr) -> bool:
    if isinstance(node, If):
        return is_boolean(node.then)
    return isinstance(node, (Bool, Compare, Logic, Not))


def walk(node: Expr):
    yield node
    if isinstance(node, (Neg, Not)):
        yield from walk(node.operand)
    elif isinstance(node, (Arith, Compare, Logic)):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, If):
        yield from walk(node.cond)
        yield from walk(node.then)
        yield from walk(node.other)


def refs(node: Expr | None) -> set[str]:
    if node is None:
        return set()
    return {n.name for n in walk(node) if isinstance(n, Ref)}


def fields_used(node: Expr | None) -> set[str]:
    if node is None:
        return set()
    return {n.name for n in walk(node) if isinstance(n, Field)}


# ---- program ----------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    params: tuple[int, ...]
    source: str = "close"


@dataclass(frozen=True)
class Sizing:
    kind: str = "equal_weight"
    lookback: int | None = None          # inverse_volatility
    fraction: float | None = None        # fixed_fraction
    expr: Expr | None = None             # signal_proportional
    shares: tuple[tuple[str, float], ...] = ()  # market_cap


@dataclass(frozen=True)
class Rebalance:
    kind: str = "daily"
    n: int | None = None


@dataclass(frozen=True)
class Program:
    name: str
    tags: tuple[str, ...]
    indicators: tuple[tuple[str, IndicatorSpec], ...]
    entry: Expr
    exit: Expr
    short_entry: Expr | None = None
    short_exit: Expr | None = None
    sizing: Sizing = field(default_factory=Sizing)
    trailing_stop: float | None = None
    max_weight: float | None = None
    rebalance: Rebalance = field(default_factory=Rebalance)
    fallback: str = "cash"

    @property
    def indicator_map(self) -> dict[str, IndicatorSpec]:
        return dict(self.indicators)

    def rules(self) -> dict[str, Expr]:
        out = {"entry": self.entry, "exit": self.exit}
        if self.short_entry is not None:
            out["short_entry"] = self.short_entry
        if self.short_exit is not None:
            out["short_exit"] = self.short_exit
        if self.sizing.expr is not None:
            out["sizing"] = self.sizing.expr
        return out

    def referenced(self) -> set[str]:
        out: set[str] = set()
        for expr in self.rules().values():
            out |= refs(expr)
        return out

    def to_text(self) -> str:
        return serialize(self)


# ---- serialization ----------------------------------------------------------

_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6, "neg": 7}


def fmt_number(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(node: Expr) -> int:
    if isinstance(node, Logic):
        return _PREC[node.op]
    if isinstance(node, Not):
        return _PREC["not"]
    if isinstance(node, Compare):
        return _PREC["cmp"]
    if isinstance(node, Arith):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Num) and node.value < 0:
        return _PREC["neg"]
    return 100


def format_expr(node: Expr) -> str:
    if isinstance(node, Num):
        return fmt_number(node.value)
    if isinstance(node, Bool):
        return "true" if node.value else "false"
    if isinstance(node, Ref):
        return node.name if node.output is None else f"{node.name}.{node.output}"
    if isinstance(node, Field):
        return node.name
    if isinstance(node, If):
        return f"if({format_expr(node.cond)}, {format_expr(node.then)}, {format_expr(node.other)})"
    if isinstance(node, (Neg, Not)):
        p = _prec(node)
        inner = format_expr(node.operand)
        if _prec(node.operand) < p or (isinstance(node, Neg) and (
                _prec(node.operand) == p or isinstance(node.operand, Num))):
            inner = f"({inner})"
        return f"-{inner}" if isinstance(node, Neg) else f"not {inner}"
    # binary, all left-associative; comparisons are non-associative
    p = _prec(node)
    left, right = format_expr(node.left), format_expr(node.right)
    lp, rp = _prec(node.left), _prec(node.right)
    if lp < p or (isinstance(node, Compare) and lp == p):
        left = f"({left})"
    if rp <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def format_indicator(spec: IndicatorSpec) -> str:
    args = [str(p) for p in spec.params]
    if spec.source != "close":
        args.append(spec.source)
    return f"{spec.kind}({', '.join(args)})"


def format_sizing(s: Sizing) -> str:
    if s.kind == "inverse_volatility":
        return f"inverse_volatility({s.lookback})"
    if s.kind == "fixed_fraction":
        return f"fixed_fraction({fmt_number(s.fraction)})"
    if s.kind == "signal_proportional":
        return f"signal_proportional({format_expr(s.expr)})"
    if s.kind == "market_cap":
        return "market_cap(" + ", ".join(f"{sym}: {fmt_number(n)}" for sym, n in s.shares) + ")"
    return s.kind


def format_rebalance(r: Rebalance) -> str:
    return f"every_n_days({r.n})" if r.kind == "every_n_days" else r.kind


def serialize(p: Program) -> str:
    lines = [f"program {p.name}", "tags " + ", ".join(p.tags) if p.tags else "tags"]
    for name, spec in p.indicators:
        lines.append(f"indicator {name} = {format_indicator(spec)}")
    lines.append(f"entry: {format_expr(p.entry)}")
    lines.append(f"exit: {format_expr(p.exit)}")
    if p.short_entry is not None:
        lines.append(f"short_entry: {format_expr(p.short_entry)}")
    if p.short_exit is not None:
        lines.append(f"short_exit: {format_expr(p.short_exit)}")
    lines.append(f"sizing: {format_sizing(p.sizing)}")
    if p.trailing_stop is not None:
        lines.append(f"trailing_stop: {fmt_number(p.trailing_stop)}")
    if p.max_weight is not None:
        lines.append(f"max_weight: {fmt_number(p.max_weight)}")
    lines.append(f"rebalance: {format_rebalance(p.rebalance)}")
    if p.fallback != "cash":
        lines.append(f"fallback: {p.fallback}")
    return "\n".join(lines) + "\n"
