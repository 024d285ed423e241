"""Slow, obviously-correct reference implementations used only by the tests."""

import math


def brute_force_mdd(equity):
    """Peak recomputed from scratch for every point: O(n^2)."""
    worst = 0.0
    for j in range(len(equity)):
        peak = max(equity[: j + 1])
        d = (equity[j] - peak) / peak
        if d < worst:
            worst = d
    return worst


def quadratic_mdd(equity):
    """Every (peak index, trough index) pair with peak before trough."""
    worst = 0.0
    for i in range(len(equity)):
        for j in range(i + 1, len(equity)):
            d = (equity[j] - equity[i]) / equity[i]
            if d < worst:
                worst = d
    return worst


def mean(xs):
    return math.fsum(xs) / len(xs)


def sample_std(xs):
    m = mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def ref_sharpe(returns):
    return mean(returns) / sample_std(returns) * math.sqrt(252)


def ref_sortino(returns):
    neg = [r for r in returns if r < 0]
    downside = math.sqrt(math.fsum(r * r for r in neg) / len(neg))
    return mean(returns) / downside * math.sqrt(252)


def ref_information_ratio(returns, bench):
    active = [a - b for a, b in zip(returns, bench)]
    return mean(active) / sample_std(active) * math.sqrt(252)


def ref_sma(xs, n):
    return [None if i + 1 < n else sum(xs[i + 1 - n: i + 1]) / n for i in range(len(xs))]
