"""Truncated two-point function of the frozen measure and the exact number variance.

The generating function of ``g(k) = E[eta(j) eta(j+k)] - rho^2`` is

    G(z) = z (sqrt(1 - a z^2) - 2 delta)^2 / (4 (z - 1)(z + 1)^2),   a = 1 - 4 delta^2,

with the principal branch of the square root (value 1 at ``z = 0``).  The
coefficients are extracted by truncated power-series long division.  For odd
``k`` a second, independent route integrates the discontinuity across the
branch cut ``[z_*, oo)``, ``z_* = a^(-1/2)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numba
import numpy as np

EXACT_MAX_K = 64


def _check_delta(delta) -> None:
    if not 0 <= delta < Fraction(1, 2):
        raise ValueError(f"delta must lie in [0, 1/2), got {delta}")


@dataclass(frozen=True)
class CorrelationTable:
    delta: float
    K: int
    g: np.ndarray  # g[k] for k = 0..K, g[0] unused (= 0)

    @property
    def rho(self) -> float:
        return 0.5 - self.delta

    @property
    def zstar(self) -> float:
        return (1.0 - 4.0 * self.delta**2) ** -0.5

    def __getitem__(self, k: int) -> float:
        if not 1 <= k <= self.K:
            raise IndexError(k)
        return float(self.g[k])

    def paired_residuals(self) -> np.ndarray:
        """``g(2n+1) + g(2n+2)`` for every complete pair."""
        last = self.K if self.K % 2 == 0 else self.K - 1
        return self.g[1:last:2] + self.g[2 : last + 1 : 2]

    def bound_margins(self) -> np.ndarray:
        """``rho^2 (1 - 4 delta^2)^j - |g(2j+1)|`` for odd lags."""
        odd = np.arange(1, self.K + 1, 2)
        j = (odd - 1) // 2
        return self.rho**2 * (1.0 - 4.0 * self.delta**2) ** j - np.abs(self.g[odd])

    def to_csv(self, path_or_file) -> None:
        rows = []
        a = 1.0 - 4.0 * self.delta**2
        for k in range(1, self.K + 1):
            odd = k if k % 2 else k - 1
            partner = odd + 1
            residual = self.g[odd] + self.g[partner] if partner <= self.K else math.nan
            margin = self.rho**2 * a ** ((odd - 1) // 2) - abs(self.g[odd])
            rows.append((k, repr(float(self.g[k])), repr(float(residual)), repr(float(margin))))
        _write_rows(path_or_file, ("k", "g", "paired_residual", "bound_margin"), rows)


def _write_rows(path_or_file, header, rows) -> None:
    if hasattr(path_or_file, "write"):
        w = csv.writer(path_or_file, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, header, rows)


def numerator_coefficients(delta: float, K: int) -> np.ndarray:
    """Coefficients of ``z (sqrt(1 - a z^2) - 2 delta)^2`` up to ``z^K``.

    Expanding the square, ``z (1 + 4 delta^2 - a z^2 - 4 delta s(z))`` with
    ``s(z) = sum_m c_m a^m z^(2m)``, ``c_m = binom(1/2, m) (-1)^m``.
    """
    a = 1.0 - 4.0 * delta * delta
    num = np.zeros(K + 1)
    if K >= 1:
        num[1] = 1.0 + 4.0 * delta * delta - 4.0 * delta
    if K >= 3:
        num[3] = -a
    if delta > 0.0 and K >= 3:
        c = 1.0
        am = 1.0
        for m in range(1, (K - 1) // 2 + 1):
            c *= (m - 1.5) / m
            am *= a
            num[2 * m + 1] += -4.0 * delta * c * am
    return num


@numba.njit(cache=True)
def _divide(num, K):
    """Long division by ``4 (z^3 + z^2 - z - 1)`` with compensated sums.

    ``g_k = -num_k/4 - g_{k-1} + g_{k-2} + g_{k-3}``.
    """
    g = np.zeros(K + 1)
    for k in range(1, K + 1):
        terms = np.empty(4)
        terms[0] = -0.25 * num[k]
        terms[1] = -g[k - 1]
        terms[2] = g[k - 2] if k >= 2 else 0.0
        terms[3] = g[k - 3] if k >= 3 else 0.0
        s = 0.0
        comp = 0.0
        for t in terms:
            tot = s + t
            if abs(s) >= abs(t):
                comp += (s - tot) + t
            else:
                comp += (t - tot) + s
            s = tot
        g[k] = s + comp
    return g


def correlations_by_series(delta: float, K: int) -> CorrelationTable:
    _check_delta(delta)
    if K < 1:
        raise ValueError("K must be positive")
    delta = float(delta)
    g = _divide(numerator_coefficients(delta, K), K)
    return CorrelationTable(delta, K, g)


def correlations_exact(delta, K: int) -> list[Fraction]:
    """Exact rational ``[g(0), ..., g(K)]`` for rational ``delta`` and ``K <= 64``."""
    if K > EXACT_MAX_K:
        raise ValueError(f"exact mode supports K <= {EXACT_MAX_K}")
    d = Fraction(delta)
    _check_delta(d)
    a = 1 - 4 * d * d
    num = [Fraction(0)] * (K + 1)
    if K >= 1:
        num[1] = 1 + 4 * d * d - 4 * d
    if K >= 3:
        num[3] = -a
    c = Fraction(1)
    for m in range(1, (K - 1) // 2 + 1):
        c *= Fraction(2 * m - 3, 2 * m)
        num[2 * m + 1] += -4 * d * c * a**m
    g = [Fraction(0)] * (K + 1)
    for k in range(1, K + 1):
        g[k] = -num[k] / 4 - g[k - 1] + (g[k - 2] if k >= 2 else 0) + (g[k - 3] if k >= 3 else 0)
    return g


# ---------------------------------------------------------------------------
# odd lags by the branch-cut integral
# ---------------------------------------------------------------------------

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(20)


def _integrand(t: np.ndarray, zstar: float, k: int) -> np.ndarray:
    # z = z* cosh t: sqrt(z^2 - z*^2) dz = z*^2 sinh^2 t dt
    z = zstar * np.cosh(t)
    sh = np.sinh(t)
    return zstar**2 * sh * sh / (z**k * (z * z - 1.0) ** 2)


def _panels(T: float, n: int, width: float) -> np.ndarray:
    """Panel edges on [0, T], graded geometrically from a first width near 0."""
    inner = np.geomspace(width, T, n) if width < T else np.array([T])
    return np.concatenate(([0.0], inner))


def _gauss(edges: np.ndarray, zstar: float, k: int) -> float:
    a, b = edges[:-1, None], edges[1:, None]
    t = 0.5 * (b - a) * _NODES + 0.5 * (a + b)
    vals = _integrand(t, zstar, k)
    return float(np.sum(0.5 * (b - a)[:, 0] * (vals @ _WEIGHTS)))


def correlation_by_integral(delta: float, k: int, rtol: float = 1e-13) -> float:
    """``g(k) = -(2 delta / (pi z_*)) int_{z_*}^oo sqrt(z^2 - z_*^2) / (z^k (z^2 - 1)^2) dz`` for odd ``k``.

    Gauss-Legendre panels on ``t in [0, T]``, doubled until successive values
    agree; ``T`` is set where the integrand's ``e^{-(k+2) t}`` decay is below
    double precision.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError("integral representation holds for odd k only")
    _check_delta(delta)
    if delta == 0:
        raise ValueError("delta = 0 makes the integrand singular at z_*; use the series")
    delta = float(delta)
    zstar = (1.0 - 4.0 * delta * delta) ** -0.5
    eps2 = zstar * zstar - 1.0
    # integrand ~ 2^(k+2) e^{-(k+2) t} / z*^(k+2) for large t
    T = (math.log(2.0) * (k + 2) + 40.0 * math.log(10.0)) / (k + 2)
    T = max(T, math.acosh(1.0 + 1.0 / zstar) + 1.0)
    # the peak sits at t of order sqrt(z*^2 - 1) (where z^2 - 1 doubles)
    width = min(T, 0.05 * math.sqrt(eps2))
    n = 16
    prev = _gauss(_panels(T, n, width), zstar, k)
    while True:
        n *= 2
        cur = _gauss(_panels(T, n, width), zstar, k)
        if abs(cur - prev) <= rtol * abs(cur) or n > 1 << 14:
            break
        prev = cur
    return -(2.0 * delta / (math.pi * zstar)) * cur


# ---------------------------------------------------------------------------
# number variance
# ---------------------------------------------------------------------------


def _variance_forms(table: CorrelationTable, L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rho = table.rho
    g = table.g
    base = rho * (1.0 - rho) * L.astype(float)
    # odd-lag form: rho(1-rho)L + 2 sum_{k odd <= L-1} g(k)
    odd = np.zeros_like(g)
    odd[1::2] = g[1::2]
    c_odd = np.cumsum(odd)
    reduced = base + 2.0 * c_odd[L - 1]
    # double-sum form: 2 sum_{k=1}^{L-1} sum_{j<=k} g(j) = 2 sum_j (L - j) g(j)
    c0 = np.cumsum(g)
    c1 = np.cumsum(np.arange(len(g)) * g)
    double = base + 2.0 * (L * c0[L - 1] - c1[L - 1])
    return reduced, double


def exact_variances(delta: float, Ls: Sequence[int], table: CorrelationTable | None = None,
                    rtol: float = 1e-9) -> np.ndarray:
    """``Var N(L)`` for several window lengths from one correlation table."""
    L = np.asarray(Ls, dtype=np.int64)
    if np.any(L < 1):
        raise ValueError("L must be positive")
    need = int(L.max()) - 1
    if table is None:
        table = correlations_by_series(delta, max(need, 1))
    elif table.K < need:
        raise ValueError(f"correlation table too short: K={table.K}, need {need}")
    reduced, double = _variance_forms(table, L)
    gap = np.abs(reduced - double)
    if np.any(gap > rtol * np.maximum(np.abs(reduced), 1e-3)):
        worst = int(np.argmax(gap))
        raise ArithmeticError(
            f"variance forms disagree at L={L[worst]}: {reduced[worst]} vs {double[worst]}"
        )
    return reduced


def exact_variance(delta: float, L: int, table: CorrelationTable | None = None) -> float:
    return float(exact_variances(delta, [L], table)[0])
