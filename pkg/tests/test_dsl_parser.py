import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratmap.dsl import (BASELINE_KINDS, DslSyntaxError, ParamOutOfRange, UnboundReference,
                          UnknownCategory, UnknownIndicator, builtin_baseline, parse_program, serialize)
from stratmap.dsl.program import (Arith, Bool, Compare, Field, If, Logic, Neg, Not, Num, Program, Ref,
                                  format_expr)

HEAD = "program t\ntags momentum_trend\nindicator f = sma(10)\nindicator k = stochastic_kdj(14, 3)\n"
TAIL = "sizing: equal_weight\nrebalance: daily\n"


def prog(entry="f > close", exit_="f < close", extra=""):
    return parse_program(f"{HEAD}entry: {entry}\nexit: {exit_}\n{extra}{TAIL}")


def test_minimal_program():
    p = parse_program("program p\nentry: true\nexit: false\n")
    assert p.tags == () and p.sizing.kind == "equal_weight" and p.rebalance.kind == "daily"
    assert p.fallback == "cash"


def test_precedence_and_associativity():
    p = prog(entry="close - f - 1 > 2 * f + 3 and not close < 1 or false")
    assert p.entry == Logic("or", Logic("and",
        Compare(">", Arith("-", Arith("-", Field("close"), Ref("f")), Num(1.0)),
                Arith("+", Arith("*", Num(2.0), Ref("f")), Num(3.0))),
        Not(Compare("<", Field("close"), Num(1.0)))), Bool(False))


def test_continuation_lines_and_comments():
    p = parse_program("program p  # name\nentry: close > 1 and\n    close < 5\nexit: false\n")
    assert p.entry == Logic("and", Compare(">", Field("close"), Num(1.0)), Compare("<", Field("close"), Num(5.0)))


@pytest.mark.parametrize("text,exc,line", [
    (HEAD + "entry: f >\nexit: false\n", DslSyntaxError, 5),
    (HEAD + "entry: f > g\nexit: false\n", UnboundReference, 5),
    (HEAD + "entry: k > 1\nexit: false\n", UnboundReference, 5),
    (HEAD + "entry: f.x > 1\nexit: false\n", UnboundReference, 5),
    ("program p\nindicator z = zigzag(3)\nentry: true\nexit: false\n", UnknownIndicator, 2),
    ("program p\nindicator z = sma(0)\nentry: true\nexit: false\n", ParamOutOfRange, 2),
    ("program p\nindicator z = sma(300)\nentry: true\nexit: false\n", ParamOutOfRange, 2),
    ("program p\nindicator z = rolling_vol(1)\nentry: true\nexit: false\n", ParamOutOfRange, 2),
    ("program p\nindicator z = sma(2.5)\nentry: true\nexit: false\n", DslSyntaxError, 2),
    ("program p\nindicator z = macd_hist(3, 6)\nentry: true\nexit: false\n", DslSyntaxError, 2),
    ("program p\nentry: close\nexit: false\n", DslSyntaxError, 2),
    ("program p\nentry: true\nexit: false\nsizing: signal_proportional(close > 1)\n", DslSyntaxError, 4),
    ("program p\nentry: 1 < close < 2\nexit: false\n", DslSyntaxError, 2),
    ("program p\nentry: true\nexit: false\ntrailing_stop: 1.5\n", ParamOutOfRange, 4),
    ("program p\nentry: true\nexit: false\nrebalance: every_n_days(0)\n", ParamOutOfRange, 4),
    ("program p\nentry: true\nexit: false\nsizing: fixed_fraction(2)\n", ParamOutOfRange, 4),
    ("program p\nentry: true\nexit: false\nsizing: inverse_volatility(1)\n", ParamOutOfRange, 4),
    ("program p\nentry: true\nentry: false\nexit: false\n", DslSyntaxError, 3),
    ("program p\nentry: true\nexit: false\nbogus: 1\n", DslSyntaxError, 4),
    ("program p\nentry: true\nexit: false\nentry_x: $\n", DslSyntaxError, 4),
])
def test_errors_carry_line(text, exc, line):
    with pytest.raises(exc) as info:
        parse_program(text)
    assert info.value.line == line
    assert info.value.feedback().startswith(exc.kind)


def test_missing_required_line():
    with pytest.raises(DslSyntaxError, match="exit"):
        parse_program("program p\nentry: true\n")


def test_taxonomy_and_bounds():
    text = "program p\ntags momentum_trend, seasonal\nindicator f = sma(60)\nentry: f > 1\nexit: false\n"
    with pytest.raises(UnknownCategory):
        parse_program(text, taxonomy=["momentum_trend"])
    with pytest.raises(ParamOutOfRange):
        parse_program(text, param_bounds={"sma": (5, 50)})
    assert parse_program(text, taxonomy=["momentum_trend", "seasonal"]).tags == ("momentum_trend", "seasonal")


def test_market_cap_and_optional_lines_round_trip():
    text = ("program full\ntags risk_allocation\nindicator v = rolling_vol(20, high)\n"
            "entry: v < 0.02\nexit: v > 0.05\nshort_entry: false\nshort_exit: true\n"
            "sizing: market_cap(AAA: 3000000, BBB: 1500000.5)\ntrailing_stop: 0.1\nmax_weight: 0.5\n"
            "rebalance: every_n_days(5)\nfallback: equal_weight\n")
    p = parse_program(text)
    assert serialize(p) == text
    assert p.indicator_map["v"].source == "high"


@pytest.mark.parametrize("kind", [k for k in BASELINE_KINDS if k != "market_cap"])
def test_baselines_round_trip(kind):
    p = builtin_baseline(kind)
    assert parse_program(serialize(p)) == p


def test_market_cap_needs_shares():
    with pytest.raises(ValueError):
        builtin_baseline("market_cap")
    assert builtin_baseline("market_cap", {"A": 2.0}).sizing.shares == (("A", 2.0),)


# ---- generated round trip ------------------------------------------------------

_nums = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).map(Num)
_atoms = st.one_of(_nums, st.sampled_from([Ref("f"), Ref("k", "k"), Ref("k", "j"), Field("close"),
                                           Field("month"), Field("volume")]))


def _numeric(children):
    return st.one_of(
        st.builds(Arith, st.sampled_from("+-*/"), children, children),
        st.builds(Neg, children),
    )


numeric = st.recursive(_atoms, _numeric, max_leaves=8)


def _boolean(children):
    return st.one_of(
        st.builds(Logic, st.sampled_from(["and", "or"]), children, children),
        st.builds(Not, children),
        st.builds(If, children, children, children),
    )


boolean = st.recursive(
    st.one_of(st.builds(Compare, st.sampled_from(["<", "<=", ">", ">=", "==", "!="]), numeric, numeric),
              st.sampled_from([Bool(True), Bool(False)])),
    _boolean, max_leaves=6)


@settings(max_examples=300, deadline=None)
@given(entry=boolean, size=numeric)
def test_serialize_parse_round_trip(entry, size):
    text = (f"{HEAD}entry: {format_expr(entry)}\nexit: false\n"
            f"sizing: signal_proportional({format_expr(size)})\nrebalance: daily\n")
    p = parse_program(text)
    assert p.entry == entry
    assert p.sizing.expr == size
    assert isinstance(p, Program)
    assert serialize(parse_program(serialize(p))) == serialize(p)
