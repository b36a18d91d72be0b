"""Renewal structure of the frozen limit measure.

Under the frozen measure at density ``rho = 1/2 - delta`` every particle is
isolated, and the second site of each ``00`` pair (a *renewal event*) starts
an independent block.  The distance between consecutive renewal events is
``Y = 2X + 1`` where ``X`` has the Catalan-geometric law

    P(X = n) = C_n rho^n (1 - rho)^(n + 1),

and the interior of each block is the alternating word ``(10)^X``.

This module holds that law (:class:`GapLaw`), the law of the first renewal
to the right of the origin (:class:`FirstRenewalLaw`) and an exact sampler of
finite windows of the frozen measure (:func:`sample_window`).
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from fep1d.streams import as_generator

DEFAULT_TABLE_CAP = 10**8

# tail mass below which the gap table is treated as complete
_SATURATION = 1e-18


class TableCapExceeded(RuntimeError):
    """The inverse-CDF table would exceed its hard cap (delta too small)."""


def catalan(n: int) -> int:
    if n < 0:
        raise ValueError("catalan(n) needs n >= 0")
    return math.comb(2 * n, n) // (n + 1)


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 <= delta < 0.5:
        raise ValueError(f"delta must lie in [0, 1/2), got {delta}")
    return delta


@numba.njit(cache=True)
def _extend_pmf(pmf, cdf, start, stop, x, total, comp):
    # x = rho (1 - rho); C_{n+1}/C_n = 2(2n+1)/(n+2).  The running sum is
    # compensated (Neumaier) so that 1 - cdf stays accurate over long tables.
    p = pmf[start - 1]
    for n in range(start, stop):
        p = p * x * 2.0 * (2.0 * (n - 1) + 1.0) / (n + 1.0)
        t = total + p
        if abs(total) >= abs(p):
            comp += (total - t) + p
        else:
            comp += (p - t) + total
        total = t
        pmf[n] = p
        cdf[n] = total + comp
    return total, comp


class GapLaw:
    """Law of the block variable ``X`` between renewal events.

    Probabilities come from the ratio recurrence
    ``p_{n+1} = p_n rho (1 - rho) 2(2n + 1)/(n + 2)`` and are kept in a table
    that grows on demand up to ``cap`` entries.
    """

    def __init__(self, delta: float, cap: int = DEFAULT_TABLE_CAP):
        self.delta = _check_delta(delta)
        self.rho = 0.5 - self.delta
        self.cap = int(cap)
        self._x = self.rho * (1.0 - self.rho)
        self._pmf = np.empty(0)
        self._cdf = np.empty(0)
        self._sum = (0.0, 0.0)
        self.ensure(63)

    # ---- table management -------------------------------------------------

    @property
    def pmf_table(self) -> np.ndarray:
        view = self._pmf.view()
        view.flags.writeable = False
        return view

    @property
    def cdf_table(self) -> np.ndarray:
        view = self._cdf.view()
        view.flags.writeable = False
        return view

    def __len__(self) -> int:
        return len(self._pmf)

    def ensure(self, n: int) -> None:
        """Make sure the table covers index ``n``."""
        size = len(self._pmf)
        if n < size:
            return
        new_size = max(n + 1, 2 * size, 64)
        if new_size > self.cap:
            if n + 1 > self.cap:
                raise TableCapExceeded(
                    f"gap table needs {n + 1} entries (cap {self.cap}); "
                    f"delta={self.delta} is too small for exact sampling"
                )
            new_size = self.cap
        pmf = np.empty(new_size)
        cdf = np.empty(new_size)
        pmf[:size] = self._pmf
        cdf[:size] = self._cdf
        if size == 0:
            pmf[0] = cdf[0] = 1.0 - self.rho
            self._sum = (1.0 - self.rho, 0.0)
            size = 1
        self._sum = _extend_pmf(pmf, cdf, size, new_size, self._x, *self._sum)
        self._pmf, self._cdf = pmf, cdf

    def tail_bound(self, n: int) -> float:
        """Upper bound on ``P(X > n)`` from the geometric domination of the ratios."""
        if self.delta == 0.0:
            return 1.0
        a = 1.0 - 4.0 * self.delta**2
        return self.pmf(n) * a / (4.0 * self.delta**2)

    def saturated(self) -> bool:
        """True when the table already carries all but a negligible tail."""
        if self.delta == 0.0:
            return False
        last = len(self._pmf) - 1
        return self._pmf[last] == 0.0 or self.tail_bound(last) < _SATURATION

    # ---- distribution functions ------------------------------------------

    def pmf(self, n: int) -> float:
        if n < 0:
            return 0.0
        self.ensure(n)
        return float(self._pmf[n])

    def cdf(self, n: int) -> float:
        if n < 0:
            return 0.0
        self.ensure(n)
        return float(self._cdf[n])

    def sf(self, n: int) -> float:
        """``P(X > n)``."""
        return max(0.0, 1.0 - self.cdf(n))

    def tail(self, L: int) -> float:
        """``q(L) = P(Y > L) = P(X > floor((L - 1)/2))``; ``q(0) = 1``."""
        if L <= 0:
            return 1.0
        return self.sf((L - 1) // 2)

    def tails(self, L: int) -> np.ndarray:
        """Vector ``[q(0), q(1), ..., q(L)]``."""
        self.ensure(max(0, (L - 1) // 2))
        q = np.ones(L + 1)
        if L >= 1:
            idx = (np.arange(1, L + 1) - 1) // 2
            q[1:] = np.maximum(0.0, 1.0 - self._cdf[idx])
        return q

    def tail_ratio(self, L: int) -> float:
        """Diagnostic ``q_delta(L) / q_0(L)``; no accuracy claim attached."""
        return self.tail(L) / _zero_tail(L)

    def mean(self) -> float:
        """Closed-form ``E X = rho / (2 delta)``, consistent with renewal density ``2 delta``."""
        if self.delta == 0.0:
            return math.inf
        return self.rho / (2.0 * self.delta)

    # ---- sampling ----------------------------------------------------------

    def _cover(self, u_max: float) -> None:
        while self._cdf[-1] <= u_max and not self.saturated():
            self.ensure(2 * len(self._pmf))

    def sample(self, rng=None, size: Optional[int] = None, censor: Optional[int] = None):
        """Inverse-CDF draws of ``X``.

        With ``censor=m`` every value above ``m`` is reported as ``m + 1``;
        only the first ``m + 1`` table entries are then needed, which is the
        supported way to draw from the heavy-tailed ``delta = 0`` law.
        """
        rng = as_generator(rng)
        u = rng.random(1 if size is None else size)
        if censor is not None:
            self.ensure(censor)
            x = np.searchsorted(self._cdf[: censor + 1], u, side="right")
        else:
            self._cover(float(u.max()))
            x = np.searchsorted(self._cdf, u, side="right")
            # cumulative rounding can leave cdf[-1] a hair below 1
            np.minimum(x, len(self._cdf) - 1, out=x)
        return int(x[0]) if size is None else x


def _zero_tail(L: int) -> float:
    """``q_0(L)`` via ``P(X^0 >= n) = binom(2n, n) / 4^n``."""
    if L <= 0:
        return 1.0
    n = (L - 1) // 2 + 1
    # central binomial probability by its product form
    return float(np.prod((2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * np.arange(1, n + 1))))


def gap_pmf(law: GapLaw, n: int) -> float:
    return law.pmf(n)


def gap_tail(law: GapLaw, L: int) -> float:
    return law.tail(L)


def sample_gap(law: GapLaw, rng=None) -> int:
    return law.sample(rng)


class FirstRenewalLaw:
    """Position ``F >= 1`` of the first renewal event to the right of the origin.

    ``P(F = l) = 2 delta q(l - 1)``: a renewal sits at some ``-l' <= 0`` (density
    ``2 delta``) and the next one lands at ``l``.
    """

    def __init__(self, delta: float, gap_law: Optional[GapLaw] = None):
        delta = _check_delta(delta)
        if delta == 0.0:
            raise ValueError("first-renewal law degenerates at delta = 0")
        self.delta = delta
        self.gap_law = gap_law if gap_law is not None else GapLaw(delta)

    def q(self, L: int) -> float:
        return self.gap_law.tail(L)

    def p(self, l: int) -> float:
        if l < 1:
            return 0.0
        return 2.0 * self.delta * self.q(l - 1)

    def pmf_array(self, L: int) -> np.ndarray:
        """``[0, p(1), ..., p(L)]``."""
        out = np.zeros(L + 1)
        out[1:] = 2.0 * self.delta * self.gap_law.tails(L - 1)
        return out

    def cdf(self, L: int) -> float:
        """``P(F <= L)``."""
        return float(np.sum(self.pmf_array(L)))

    def even_beyond(self, L: int) -> float:
        """``P(F even | F > L)``.

        Sums over all ``l`` reduce to moments of ``X``:
        ``sum_{l even} q(l-1) = E X`` and ``sum_{l odd} q(l-1) = 1 + E X``.
        """
        q = self.gap_law.tails(L)  # q[j], j = 0..L ; p(l) uses q[l-1]
        l = np.arange(1, L + 1)
        inside = q[l - 1]
        mean_x = self.gap_law.mean()
        t_even = max(0.0, mean_x - float(np.sum(inside[l % 2 == 0])))
        t_odd = max(0.0, 1.0 + mean_x - float(np.sum(inside[l % 2 == 1])))
        if t_even + t_odd == 0.0:
            return 0.5
        return t_even / (t_even + t_odd)


def first_renewal_pmf(law: FirstRenewalLaw, l: int) -> float:
    return law.p(l)


# ---------------------------------------------------------------------------
# windows of the frozen measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSample:
    """Sites ``1..L`` of a frozen configuration plus the occupancy of site 0."""

    delta: float
    length: int
    left_context: int
    occupancy: np.ndarray
    renewal_flags: np.ndarray
    first_renewal_position: Optional[int]

    @classmethod
    def from_sites(cls, delta: float, sites: np.ndarray) -> "WindowSample":
        """Build from ``sites[0..L]`` where ``sites[0]`` is the left context."""
        sites = np.asarray(sites, dtype=np.uint8)
        flags = renewal_flags(sites)
        hits = np.flatnonzero(flags)
        first = int(hits[0]) + 1 if hits.size else None
        return cls(
            delta=float(delta),
            length=len(sites) - 1,
            left_context=int(sites[0]),
            occupancy=sites[1:].copy(),
            renewal_flags=flags,
            first_renewal_position=first,
        )

    def sites(self) -> np.ndarray:
        return np.concatenate(([self.left_context], self.occupancy)).astype(np.uint8)

    def to_record(self) -> dict:
        packed = np.packbits(self.occupancy.astype(np.uint8))
        return {
            "delta": self.delta,
            "L": self.length,
            "left_context": self.left_context,
            "occupancy": base64.b64encode(packed.tobytes()).decode("ascii"),
            "first_renewal_position": self.first_renewal_position,
        }

    @classmethod
    def from_record(cls, record: dict) -> "WindowSample":
        L = int(record["L"])
        raw = np.frombuffer(base64.b64decode(record["occupancy"]), dtype=np.uint8)
        occ = np.unpackbits(raw)[:L]
        sites = np.concatenate(([int(record["left_context"])], occ))
        return cls.from_sites(record["delta"], sites)


def renewal_flags(sites: np.ndarray) -> np.ndarray:
    """Flags for sites ``1..L``: both the site and its left neighbour empty."""
    sites = np.asarray(sites)
    return ((sites[:-1] == 0) & (sites[1:] == 0)).astype(np.uint8)


class _WindowTables:
    """Precomputed inversion tables for windows of length ``L``."""

    def __init__(self, delta: float, L: int, gap_law: Optional[GapLaw] = None):
        self.delta = _check_delta(delta)
        self.L = L
        law = gap_law if gap_law is not None else GapLaw(self.delta)
        self.gap_law = law
        m = L // 2
        law.ensure(m)
        self.gcdf = np.ascontiguousarray(law.cdf_table[: m + 1])
        if self.delta == 0.0:
            self.fcdf = np.zeros(L + 1)
            self.p_even = 0.5
        else:
            first = FirstRenewalLaw(self.delta, law)
            self.fcdf = np.cumsum(first.pmf_array(L))
            self.p_even = first.even_beyond(L)


@numba.njit(cache=True)
def _fill_window(u, pos, L, fcdf, p_even, gcdf, sites):
    """Write sites 0..L of one window; returns (new_pos, F) with F = -1 if F > L."""
    u0 = u[pos]
    pos += 1
    F = np.searchsorted(fcdf, u0, side="right")
    if F > L:
        want_even = u[pos] < p_even
        pos += 1
        F = L + 1
        if (F % 2 == 0) != want_even:
            F += 1
        for j in range(L + 1):
            sites[j] = 1 if (F - j) % 2 == 0 else 0
        return pos, -1
    for j in range(F):
        sites[j] = 1 if (F - j) % 2 == 0 else 0
    sites[F] = 0
    m = len(gcdf) - 1
    r = F
    while True:
        x = np.searchsorted(gcdf, u[pos], side="right")
        pos += 1
        nxt = r + 2 * x + 1 if x <= m else L + 1
        stop = nxt if nxt <= L else L + 1
        for j in range(r + 1, stop):
            sites[j] = (j - r) % 2
        if nxt > L:
            break
        sites[nxt] = 0
        r = nxt
    return pos, F


@numba.njit(cache=True)
def _decompose_sites(sites, L):
    """(N, N_ren, sigma, code); code 0 ok, 1 corrupted input."""
    n_part = 0
    n_ren = 0
    for i in range(1, L + 1):
        if sites[i] == 1:
            n_part += 1
            if sites[i - 1] == 1:
                return n_part, n_ren, 0, 1
        elif sites[i - 1] == 0:
            n_ren += 1
    if sites[0] == 1 and sites[1] == 1:
        return n_part, n_ren, 0, 1
    # category: 0 plain empty, 1 renewal (0-hat), 2 occupied
    c1 = 2 if sites[1] == 1 else (1 if sites[0] == 0 else 0)
    cL = 2 if sites[L] == 1 else (1 if sites[L - 1] == 0 else 0)
    if L == 1:
        cL = c1
    sigma = 0
    if (L - n_ren) % 2 == 1:
        if c1 == 0 and (cL == 0 or cL == 1):
            sigma = 1
        elif cL == 2 and (c1 == 1 or c1 == 2):
            sigma = -1
        else:
            return n_part, n_ren, 0, 1
    return n_part, n_ren, sigma, 0


@numba.njit(cache=True)
def _window_batch(u, pos, n_max, L, fcdf, p_even, gcdf, sites, out_n, out_ren, out_sig, out_bad, start):
    need = L + 3
    k = start
    while k < n_max and len(u) - pos >= need:
        pos, F = _fill_window(u, pos, L, fcdf, p_even, gcdf, sites)
        n, nr, s, code = _decompose_sites(sites, L)
        out_n[k] = n
        out_ren[k] = nr
        out_sig[k] = s
        out_bad[k] = code != 0 or 2 * n != L - nr - s
        k += 1
    return pos, k


def sample_window(delta: float, L: int, rng=None, gap_law: Optional[GapLaw] = None) -> WindowSample:
    """One exact draw of sites ``0..L`` under the frozen measure.

    ``F`` is drawn by inversion of ``P(F = l) = 2 delta q(l - 1)``; sites left of
    ``F`` are occupied iff ``F - j`` is even; later blocks are i.i.d. ``(10)^X``
    followed by a renewal.  At ``delta = 0`` a fair parity bit picks one of the
    two alternating configurations.
    """
    if L < 1:
        raise ValueError("L must be positive")
    rng = as_generator(rng)
    tables = _WindowTables(delta, L, gap_law)
    u = rng.random(L + 3)
    sites = np.empty(L + 1, dtype=np.uint8)
    _, F = _fill_window(u, 0, L, tables.fcdf, tables.p_even, tables.gcdf, sites)
    return WindowSample.from_sites(tables.delta, sites)


@dataclass
class WindowBatch:
    """Per-window particle count, renewal count, boundary term and identity failures."""

    delta: float
    L: int
    N: np.ndarray
    N_ren: np.ndarray
    sigma: np.ndarray
    bad: np.ndarray

    @property
    def identity_failures(self) -> int:
        return int(np.count_nonzero(self.bad))


_CHUNK = 1 << 21


def sample_window_batch(delta: float, L: int, n: int, rng=None, gap_law: Optional[GapLaw] = None) -> WindowBatch:
    """Draw ``n`` independent windows and decompose each one."""
    if L < 1 or n < 1:
        raise ValueError("L and n must be positive")
    rng = as_generator(rng)
    tables = _WindowTables(delta, L, gap_law)
    out_n = np.empty(n, dtype=np.int64)
    out_ren = np.empty(n, dtype=np.int64)
    out_sig = np.empty(n, dtype=np.int64)
    out_bad = np.empty(n, dtype=np.bool_)
    sites = np.empty(L + 1, dtype=np.uint8)
    chunk = max(_CHUNK, 8 * (L + 3))
    u = rng.random(chunk)
    pos, k = 0, 0
    while k < n:
        pos, k = _window_batch(u, pos, n, L, tables.fcdf, tables.p_even, tables.gcdf,
                               sites, out_n, out_ren, out_sig, out_bad, k)
        if k < n:
            u = np.concatenate((u[pos:], rng.random(chunk)))
            pos = 0
    return WindowBatch(tables.delta, L, out_n, out_ren, out_sig, out_bad)


# ---------------------------------------------------------------------------
# renewal counts under the measure conditioned on a renewal at the origin
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _palm_batch(u, pos, n_max, L, gcdf, out, start):
    m = len(gcdf) - 1
    k = start
    while k < n_max and len(u) - pos >= L + 1:
        r = 0
        c = 0
        while True:
            x = np.searchsorted(gcdf, u[pos], side="right")
            pos += 1
            if x > m:
                break
            r += 2 * x + 1
            if r > L:
                break
            c += 1
        out[k] = c
        k += 1
    return pos, k


def sample_palm_renewal_counts(delta: float, L: int, n: int, rng=None,
                               gap_law: Optional[GapLaw] = None) -> np.ndarray:
    """Number of renewal events in ``1..L`` given a renewal at the origin."""
    rng = as_generator(rng)
    law = gap_law if gap_law is not None else GapLaw(delta)
    m = L // 2
    law.ensure(m)
    gcdf = np.ascontiguousarray(law.cdf_table[: m + 1])
    out = np.empty(n, dtype=np.int64)
    chunk = max(_CHUNK, 8 * (L + 1))
    u = rng.random(chunk)
    pos, k = 0, 0
    while k < n:
        pos, k = _palm_batch(u, pos, n, L, gcdf, out, k)
        if k < n:
            u = np.concatenate((u[pos:], rng.random(chunk)))
            pos = 0
    return out


def renewal_count_tail_bound_check(delta: float, L: int, ns, counts, z: float = 3.0) -> bool:
    """Check ``P(N_ren >= n) <= (1 - q(L))^n`` for every ``n`` in ``ns``.

    ``counts`` are renewal counts in ``1..L`` drawn with a renewal at the
    origin.  Each empirical frequency may exceed the bound by ``z`` standard
    errors.
    """
    counts = np.asarray(counts)
    size = counts.size
    q = GapLaw(delta).tail(L)
    for n in ns:
        p_hat = np.count_nonzero(counts >= n) / size
        bound = (1.0 - q) ** n
        se = math.sqrt(max(p_hat * (1.0 - p_hat), bound * (1.0 - bound)) / size)
        if p_hat > bound + z * se:
            return False
    return True
