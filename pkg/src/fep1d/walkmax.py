"""Maximum of a simple symmetric random walk.

The first passage time of the walk to level 1 has the law of the renewal
distance at ``delta = 0``, so the maximum ``M(L)`` over ``L`` steps is the
number of renewal events in ``1..L`` when a renewal sits at the origin.
Its law follows from the reflection principle:

    P(M(L) = n) = P(W_L = n)      if L - n is even
                = P(W_L = n + 1)  if L - n is odd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

BRUTEFORCE_MAX_L = 20
EXACT_PMF_MAX_L = 1024  # below this the pmf is exact integer counts / 2^L


@dataclass(frozen=True)
class WalkMaxLaw:
    L: int
    pmf: np.ndarray  # index n = 0..L

    def second_moment(self) -> float:
        n = np.arange(self.L + 1, dtype=float)
        return float(np.sum(n * n * self.pmf))

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)


def _endpoint_pmf(L: int) -> np.ndarray:
    """``P(W_L = m)`` for ``m = -L..L`` (index ``m + L``), via ratio updates from the centre."""
    out = np.zeros(2 * L + 1)
    m0 = L % 2
    # P(W_L = m0) = binom(L, (L + m0)/2) 2^-L as a product of ratios
    # (for odd L = 2k - 1 this equals binom(2k, k) 4^-k as well)
    k = (L + m0) // 2
    j = np.arange(1, k + 1, dtype=float)
    centre = float(np.prod((2.0 * j - 1.0) / (2.0 * j)))
    ms = np.arange(m0, L - 1, 2)  # step m -> m + 2
    ratios = (L - ms) / (L + ms + 2.0)
    upper = centre * np.concatenate(([1.0], np.cumprod(ratios)))
    idx = np.arange(m0, L + 1, 2) + L
    out[idx] = upper
    out[L - np.arange(m0, L + 1, 2)] = upper
    return out


def walk_max_pmf(L: int) -> WalkMaxLaw:
    if L < 1:
        raise ValueError("L must be positive")
    if L <= EXACT_PMF_MAX_L:
        # int / int division is correctly rounded
        return WalkMaxLaw(L, np.array([c / 2**L for c in walk_max_counts(L)]))
    w = _endpoint_pmf(L)
    n = np.arange(L + 1)
    m = np.where((L - n) % 2 == 0, n, n + 1)
    pmf = np.where(m <= L, w[np.minimum(m, L) + L], 0.0)
    return WalkMaxLaw(L, pmf)


def walk_max_counts(L: int) -> list[int]:
    """Exact ``2^L P(M(L) = n)`` from integer binomials."""
    if L < 1:
        raise ValueError("L must be positive")
    # ending[m] = binom(L, (L + m)/2) for m = L % 2, L % 2 + 2, ..., L
    ending = {}
    m = L % 2
    c = math.comb(L, (L + m) // 2)
    while m <= L:
        ending[m] = c
        c = c * (L - m) // (L + m + 2)
        m += 2
    return [ending.get(n if (L - n) % 2 == 0 else n + 1, 0) for n in range(L + 1)]


def walk_max_bruteforce_counts(L: int) -> list[int]:
    """Enumerate all ``2^L`` walks and count their maxima."""
    if L < 1 or L > BRUTEFORCE_MAX_L:
        raise ValueError(f"bruteforce needs 1 <= L <= {BRUTEFORCE_MAX_L}")
    paths = np.arange(2**L, dtype=np.int64)
    bits = (paths[:, None] >> np.arange(L)) & 1
    walk = np.cumsum(2 * bits - 1, axis=1)
    maxima = np.maximum(walk.max(axis=1), 0)
    return np.bincount(maxima, minlength=L + 1).tolist()


def walk_max_bruteforce(L: int) -> dict[int, Fraction]:
    counts = walk_max_bruteforce_counts(L)
    return {n: Fraction(c, 2**L) for n, c in enumerate(counts)}


def walk_max_second_moment(L: int, check: bool = True) -> float:
    """``E[M(L)^2]``.

    For odd ``L`` the closed form ``E W^2 - E|W| + (1 - P(W = 0))/2`` is used
    and, with ``check``, compared against direct summation.
    """
    law = walk_max_pmf(L)
    direct = law.second_moment()
    if L % 2 == 0:
        return direct
    w = _endpoint_pmf(L)
    m = np.arange(-L, L + 1, dtype=float)
    closed = L - float(np.sum(np.abs(m) * w)) + 0.5 * (1.0 - w[L])
    if check and abs(closed - direct) > 1e-10 * abs(closed):
        raise ArithmeticError(f"second moment mismatch at L={L}: {closed} vs {direct}")
    return closed


def half_normal_distance(L: int) -> float:
    """Kolmogorov-Smirnov distance between ``M(L)/sqrt(L)`` and ``|Z|``."""
    law = walk_max_pmf(L)
    cdf = law.cdf()
    x = np.arange(L + 1) / math.sqrt(L)
    target = np.vectorize(math.erf)(x / math.sqrt(2.0))
    left = np.concatenate(([0.0], cdf[:-1]))
    d = max(np.max(np.abs(cdf - target)), np.max(np.abs(left - target)))
    # beyond the last atom the empirical cdf is 1
    return float(min(1.0, d))
