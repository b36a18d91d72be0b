"""Window statistics, the particle/renewal decomposition and regime predictions.

For a window ``1..L`` of a frozen configuration,

    N = (L - (N_ren + sigma)) / 2,

where ``N_ren`` counts renewal events in the window and ``sigma`` in
``{-1, 0, +1}`` is fixed by the parity of ``L - N_ren`` and the types of the two
end sites.  Hence ``Var N = (Var N_ren + P(sigma != 0)) / 4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from fep1d.renewal import WindowSample, _decompose_sites

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
INTERMEDIATE_CONST = (2.0 / 3.0) * SQRT_2_OVER_PI

DEFAULT_SMALL_MARGIN = 0.6
DEFAULT_LARGE_MARGIN = 5.0


class DecompositionError(ValueError):
    """Window cannot come from a frozen configuration."""


def decompose(window: WindowSample) -> tuple[int, int, int]:
    """``(N, N_ren, sigma)`` for one window."""
    sites = np.ascontiguousarray(window.sites(), dtype=np.uint8)
    n, n_ren, sigma, code = _decompose_sites(sites, window.length)
    if code:
        raise DecompositionError("adjacent occupied sites or unclassifiable end pair")
    return int(n), int(n_ren), int(sigma)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

_SUM_CHUNK = 1 << 16


def _isum(x: np.ndarray) -> int:
    """Exact integer sum of an int64 array (chunked to avoid overflow)."""
    return sum(int(x[i : i + _SUM_CHUNK].sum()) for i in range(0, len(x), _SUM_CHUNK))


@dataclass
class WindowAccumulator:
    """Exact integer power sums of shifted ``N``, ``N_ren`` and ``sigma``.

    Merging two accumulators adds the sums, so any reduction order gives the
    same result bit for bit.
    """

    delta: float
    L: int
    n: int = 0
    sums: dict = field(default_factory=dict)

    _KEYS = ("a", "a2", "a3", "a4", "b", "b2", "b3", "b4",
             "s", "s2", "bs", "b2s", "bs2", "b2s2", "s_neg", "s_pos")

    def __post_init__(self):
        rho = 0.5 - self.delta
        self.shift_n = round(rho * self.L)
        self.shift_ren = round(2.0 * self.delta * self.L)
        for k in self._KEYS:
            self.sums.setdefault(k, 0)

    def add_arrays(self, N, N_ren, sigma) -> "WindowAccumulator":
        a = np.asarray(N, dtype=np.int64) - self.shift_n
        b = np.asarray(N_ren, dtype=np.int64) - self.shift_ren
        s = np.asarray(sigma, dtype=np.int64)
        vals = {
            "a": a, "a2": a * a, "a3": a * a * a, "a4": a * a * a * a,
            "b": b, "b2": b * b, "b3": b * b * b, "b4": b * b * b * b,
            "s": s, "s2": s * s, "bs": b * s, "b2s": b * b * s, "bs2": b * s * s,
            "b2s2": b * b * s * s, "s_neg": (s < 0).astype(np.int64), "s_pos": (s > 0).astype(np.int64),
        }
        for k, v in vals.items():
            self.sums[k] += _isum(v)
        self.n += len(a)
        return self

    def add(self, window: WindowSample) -> "WindowAccumulator":
        n, r, s = decompose(window)
        return self.add_arrays([n], [r], [s])

    def merge(self, other: "WindowAccumulator") -> "WindowAccumulator":
        if (other.delta, other.L) != (self.delta, self.L):
            raise ValueError("cannot merge statistics of different (delta, L)")
        out = WindowAccumulator(self.delta, self.L, self.n + other.n)
        for k in self._KEYS:
            out.sums[k] = self.sums[k] + other.sums[k]
        return out

    def stats(self, blocked_var_stderr: Optional[float] = None) -> "WindowStats":
        if self.n < 2:
            raise ValueError("need at least two windows")
        n = self.n
        S = {k: v / n for k, v in self.sums.items()}

        def central(m1, m2, m3, m4):
            var = m2 - m1 * m1
            c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1**4
            return var, c4

        var_a, c4_a = central(S["a"], S["a2"], S["a3"], S["a4"])
        var_b, c4_b = central(S["b"], S["b2"], S["b3"], S["b4"])
        mu_b, mu_s = S["b"], S["s"]
        p = S["s2"]
        var_s = p - mu_s * mu_s
        cov = S["bs"] - mu_b * mu_s
        # E[(b - mu_b)^2 (s - mu_s)^2]
        e_b2s2 = S["b2s2"] - 2 * mu_b * S["bs2"] + mu_b**2 * S["s2"]
        e_b2s = S["b2s"] - 2 * mu_b * S["bs"] + mu_b**2 * S["s"]
        e_b2 = var_b
        prod2 = e_b2s2 - 2 * mu_s * e_b2s + mu_s**2 * e_b2
        var_se = math.sqrt(max(c4_a - var_a**2, 0.0) / n)
        ren_se = math.sqrt(max(c4_b - var_b**2, 0.0) / n)
        p_se = math.sqrt(max(p * (1 - p), 0.0) / n)
        rho = 0.5 - self.delta
        return WindowStats(
            delta=self.delta,
            L=self.L,
            parity="odd" if self.L % 2 else "even",
            n_samples=n,
            mean_N=self.shift_n + S["a"],
            var_N=var_a,
            var_N_stderr=var_se,
            mean_N_stderr=math.sqrt(var_a / n),
            mean_Nren=self.shift_ren + S["b"],
            mean_Nren_stderr=math.sqrt(var_b / n),
            var_Nren=var_b,
            var_Nren_stderr=ren_se,
            sigma_histogram={-1: self.sums["s_neg"], 0: n - self.sums["s2"], 1: self.sums["s_pos"]},
            p_sigma_nonzero=p,
            p_sigma_nonzero_stderr=p_se,
            mean_sigma=mu_s,
            mean_sigma_stderr=math.sqrt(max(var_s, 0.0) / n),
            cov_Nren_sigma=cov,
            cov_Nren_sigma_stderr=math.sqrt(max(prod2 - cov * cov, 0.0) / n),
            var_N_stderr_blocked=blocked_var_stderr,
            expected_mean_N=rho * self.L,
        )


@dataclass(frozen=True)
class WindowStats:
    delta: float
    L: int
    parity: str
    n_samples: int
    mean_N: float
    var_N: float
    var_N_stderr: float
    mean_N_stderr: float
    mean_Nren: float
    mean_Nren_stderr: float
    var_Nren: float
    var_Nren_stderr: float
    sigma_histogram: dict
    p_sigma_nonzero: float
    p_sigma_nonzero_stderr: float
    mean_sigma: float
    mean_sigma_stderr: float
    cov_Nren_sigma: float
    cov_Nren_sigma_stderr: float
    var_N_stderr_blocked: Optional[float]
    expected_mean_N: float

    @property
    def split_variance(self) -> float:
        """``(Var N_ren + P(sigma != 0)) / 4``."""
        return 0.25 * (self.var_Nren + self.p_sigma_nonzero)

    @property
    def split_stderr(self) -> float:
        """Combined standard error of ``var_N - split_variance``."""
        return math.sqrt(self.var_N_stderr**2
                         + 0.0625 * (self.var_Nren_stderr**2 + self.p_sigma_nonzero_stderr**2))

    @property
    def variance_stderr(self) -> float:
        """Blocked stderr when available, else the i.i.d. one."""
        if self.var_N_stderr_blocked is not None:
            return max(self.var_N_stderr_blocked, self.var_N_stderr)
        return self.var_N_stderr


def stats_from_arrays(delta: float, L: int, N, N_ren, sigma,
                      block_sizes: Optional[Sequence[int]] = None) -> WindowStats:
    acc = WindowAccumulator(delta, L).add_arrays(N, N_ren, sigma)
    blocked = None
    if block_sizes is not None:
        blocked = batch_means_variance_stderr(np.asarray(N, dtype=float), block_sizes)
    return acc.stats(blocked)


def accumulate(windows: Iterable[WindowSample]) -> WindowStats:
    acc = None
    for w in windows:
        if acc is None:
            acc = WindowAccumulator(w.delta, w.length)
        elif (w.delta, w.length) != (acc.delta, acc.L):
            raise ValueError("windows must share delta and L")
        acc.add(w)
    if acc is None:
        raise ValueError("need at least two windows")
    return acc.stats()


def batch_means_variance_stderr(x: np.ndarray, block_sizes: Sequence[int]) -> float:
    """Standard error of the sample variance from batch means of ``(x - mean)^2``."""
    x = np.asarray(x, dtype=float)
    dev2 = (x - x.mean()) ** 2
    edges = np.concatenate(([0], np.cumsum(block_sizes)))
    means = np.array([dev2[a:b].mean() for a, b in zip(edges[:-1], edges[1:]) if b > a])
    k = len(means)
    if k < 2:
        return math.nan
    return float(means.std(ddof=1) / math.sqrt(k))


# ---------------------------------------------------------------------------
# asymptotic predictions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimePrediction:
    delta: float
    L: int
    parity: str
    regime: str  # plateau | intermediate | linear | crossover
    predicted_variance: float
    thresholds: tuple  # (small-L scale, large-L scale)
    margin_factors: tuple  # (s, l)
    note: str = ""


def _formulas(delta: float, L: int) -> dict:
    rho = 0.5 - delta
    return {
        "plateau": 0.25,
        "intermediate": INTERMEDIATE_CONST * delta * L**1.5,
        "linear": rho * (1.0 - rho) * L,
    }


def predict_variance(delta: float, L: int, s: float = DEFAULT_SMALL_MARGIN,
                     l: float = DEFAULT_LARGE_MARGIN) -> RegimePrediction:
    """Asymptotic variance and regime label for window length ``L``.

    Scales are ``delta^(-2/3)`` (odd ``L``; 1 for even ``L``) and ``delta^(-2)``.
    Inside ``L < s L1`` (odd only), ``l L1 < L < s L2`` and ``L > l L2`` the
    plateau, intermediate and linear forms apply; elsewhere the label is
    ``crossover`` and the value is taken from the nearest band on a log scale.
    The linear form is ``rho(1-rho)L``; ``L/4`` is its small-delta limit.
    """
    if not 0.0 <= delta < 0.5:
        raise ValueError("delta must lie in [0, 1/2)")
    if L < 1:
        raise ValueError("L must be positive")
    odd = L % 2 == 1
    parity = "odd" if odd else "even"
    forms = _formulas(delta, L)
    note = "linear form rho(1-rho)L; L/4 is its small-delta limit"
    if delta == 0.0:
        regime = "plateau" if odd else "intermediate"
        value = 0.25 if odd else 0.0
        return RegimePrediction(delta, L, parity, regime, value, (math.inf, math.inf), (s, l), note)
    L1 = delta ** (-2.0 / 3.0) if odd else 1.0
    L2 = delta ** -2.0
    bands = {"intermediate": (l * L1, s * L2), "linear": (l * L2, math.inf)}
    if odd:
        bands["plateau"] = (0.0, s * L1)
    logL = math.log(L)

    def distance(band):
        lo, hi = band
        if lo < L < hi:
            return 0.0
        if hi <= lo:
            return math.inf
        if L <= lo:
            return math.log(lo) - logL
        return logL - math.log(hi)

    dist = {name: distance(b) for name, b in bands.items()}
    nearest = min(dist, key=dist.get)
    regime = nearest if dist[nearest] == 0.0 else "crossover"
    return RegimePrediction(delta, L, parity, regime, forms[nearest], (L1, L2), (s, l), note)


def predict_renewal_hit(delta: float, L: int) -> float:
    """``P(N_ren(L) > 0) ~ 4 sqrt(2/pi) delta sqrt(L)``, capped at 1."""
    if delta <= 0.0:
        return 0.0
    return min(1.0, 4.0 * SQRT_2_OVER_PI * delta * math.sqrt(L))


def predict_renewal_second_moment(delta: float, L: int) -> float:
    """``E N_ren(L)^2 ~ (8/3) sqrt(2/pi) delta L^(3/2)`` for ``1 << L << delta^-2``."""
    return (8.0 / 3.0) * SQRT_2_OVER_PI * delta * L**1.5


def linear_regime_bound(delta: float, L: int) -> float:
    """Bound ``1 / (2 delta^2 L)`` on ``|Var N / (rho(1-rho)L) - 1|``."""
    return 1.0 / (2.0 * delta * delta * L)
