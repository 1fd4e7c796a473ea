"""Independent brute-force metric implementations for cross-checking.

Deliberately naive: pure-Python per-day loops with fsum accumulation, no
shared code with the engine, so agreement between the two paths is
meaningful.
"""

from __future__ import annotations

import math


def _present(z_col, f_col):
    pairs = []
    for z, f in zip(z_col, f_col):
        if math.isfinite(z) and math.isfinite(f):
            pairs.append((float(z), float(f)))
    return pairs


def naive_pearson(xs: list[float], ys: list[float]) -> float | None:
    n = len(xs)
    if n < 2:
        return None
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx <= 0.0 or syy <= 0.0:
        return None
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    value = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, value))


def average_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def naive_ic(scores, returns) -> tuple[float | None, int]:
    """(average per-day Pearson, valid day count) via explicit loops."""
    n, t = len(scores), len(scores[0])
    daily = []
    for day in range(t):
        pairs = _present([scores[i][day] for i in range(n)], [returns[i][day] for i in range(n)])
        if len(pairs) < 2:
            continue
        corr = naive_pearson([p[0] for p in pairs], [p[1] for p in pairs])
        if corr is not None:
            daily.append(corr)
    if not daily:
        return None, 0
    return math.fsum(daily) / len(daily), len(daily)


def naive_rank_ic(scores, returns) -> tuple[float | None, int]:
    n, t = len(scores), len(scores[0])
    daily = []
    for day in range(t):
        pairs = _present([scores[i][day] for i in range(n)], [returns[i][day] for i in range(n)])
        if len(pairs) < 2:
            continue
        rz = average_ranks([p[0] for p in pairs])
        rf = average_ranks([p[1] for p in pairs])
        corr = naive_pearson(rz, rf)
        if corr is not None:
            daily.append(corr)
    if not daily:
        return None, 0
    return math.fsum(daily) / len(daily), len(daily)
