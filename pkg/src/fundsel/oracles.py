"""Slow reference implementations used to cross-check the fast paths.

Nothing here shares code with the routines it checks.
"""

from __future__ import annotations

import functools
import math
from typing import Callable, Mapping, Sequence

import numpy as np


def brute_force_subclust(X, radius: float = 0.5, squash: float = 1.25,
                         accept_ratio: float = 0.5, reject_ratio: float = 0.15) -> list[int]:
    """Chiu's procedure with explicit double loops over plain floats."""
    pts = [list(map(float, row)) for row in np.asarray(X)]
    n = len(pts)
    ra, rb = radius, squash * radius

    def d2(a, b):
        return sum((u - v) ** 2 for u, v in zip(a, b))

    pot = [sum(math.exp(-4.0 * d2(pts[i], pts[j]) / ra ** 2) for j in range(n)) for i in range(n)]
    chosen: list[int] = []
    p1 = None
    while True:
        k = max(range(n), key=lambda i: (pot[i], -i))
        pk = pot[k]
        if p1 is None:
            p1 = pk
        elif pk <= 0 or pk < reject_ratio * p1:
            break
        elif pk < accept_ratio * p1:
            dmin = min(math.sqrt(d2(pts[k], pts[c])) for c in chosen)
            if dmin / ra + pk / p1 < 1.0:
                pot[k] = 0.0
                continue
        chosen.append(k)
        pot = [pot[i] - pk * math.exp(-4.0 * d2(pts[i], pts[k]) / rb ** 2) for i in range(n)]
    return chosen


def brute_force_portfolios(scores: Mapping[str, float], k: int) -> tuple[list[str], list[str]]:
    """Full sort with an explicit comparator; Buy first, Sell skips Buy members."""

    def cmp_desc(a, b):
        if scores[a] != scores[b]:
            return -1 if scores[a] > scores[b] else 1
        return -1 if a < b else (1 if a > b else 0)

    def cmp_asc(a, b):
        if scores[a] != scores[b]:
            return -1 if scores[a] < scores[b] else 1
        return -1 if a < b else (1 if a > b else 0)

    names = list(scores)
    buy = sorted(names, key=functools.cmp_to_key(cmp_desc))[:k]
    sell = []
    for t in sorted(names, key=functools.cmp_to_key(cmp_asc)):
        if len(sell) == k:
            break
        if t not in buy:
            sell.append(t)
    return buy, sell


def central_difference(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up.flat[k] += h
        dn.flat[k] -= h
        g.flat[k] = (f(up) - f(dn)) / (2.0 * h)
    return g


def direct_lstsq(X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Linear least-squares coefficients [p..., r] via an SVD-based solver."""
    A = np.hstack([np.asarray(X, dtype=float), np.ones((len(X), 1))])
    return np.linalg.lstsq(A, np.asarray(T, dtype=float), rcond=None)[0]


def sequential_compound(series: Sequence[float], reverse: bool = False) -> float:
    acc = 1.0
    for r in (reversed(series) if reverse else series):
        acc *= 1.0 + r
    return acc - 1.0
