"""Reference portfolios expressed in the strategy language."""

from __future__ import annotations

from typing import Mapping

from .parser import parse_program
from .program import Program, fmt_number

BASELINE_KINDS = ("market_cap", "equal_weight", "risk_parity", "rsi_kdj", "macd_cross", "buy_hold")

_TEMPLATES = {
    "equal_weight": """
program equal_weight
tags
entry: true
exit: false
sizing: equal_weight
rebalance: daily
""",
    "buy_hold": """
program buy_hold
tags
entry: true
exit: false
sizing: equal_weight
rebalance: once
""",
    "risk_parity": """
program risk_parity
tags risk_allocation
entry: true
exit: false
sizing: inverse_volatility(60)
rebalance: daily
""",
    "macd_cross": """
program macd_cross
tags momentum_trend
indicator hist = macd_hist(12, 26, 9)
entry: hist > 0
exit: hist <= 0
sizing: equal_weight
rebalance: daily
fallback: equal_weight
""",
    # strength 2 strong buy, 1 buy, 0 sell, 0.5 neutral; weights are strength / total
    "rsi_kdj": """
program rsi_kdj
tags mean_reversion
indicator rsi = rsi(14)
indicator kdj = stochastic_kdj(14, 3)
entry: true
exit: false
sizing: signal_proportional(if(rsi < 25 and kdj.k < 15, 2,
    if(rsi < 30 and kdj.k < 20 and kdj.d < 20, 1,
    if(rsi > 70 or kdj.k > 80 or kdj.d > 80, 0, 0.5))))
rebalance: daily
""",
}


def builtin_baseline(kind: str, shares: Mapping[str, float] | None = None) -> Program:
    """One of the reference strategies; ``market_cap`` needs static share counts per symbol."""
    if kind == "market_cap":
        if not shares:
            raise ValueError("market_cap baseline needs share counts per symbol (config: market_cap_shares)")
        body = ", ".join(f"{sym}: {fmt_number(n)}" for sym, n in shares.items())
        text = ("program market_cap\ntags risk_allocation\nentry: true\nexit: false\n"
                f"sizing: market_cap({body})\nrebalance: monthly\n")
        return parse_program(text)
    if kind not in _TEMPLATES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINE_KINDS}")
    return parse_program(_TEMPLATES[kind])
