"""Facilitated exclusion dynamics on a periodic ring, run until absorption.

Two rules share the same frozen limit:

* ``continuous``: a particle with exactly one occupied neighbour hops to the
  empty neighbour on the other side at rate 1/2 (unit attempt rate split over
  two directions; in one dimension at most one direction is feasible).
  Simulated rejection-free over the set of mobile particles.
* ``parallel-ta``: in each sweep every particle with occupied left and empty
  right neighbour moves one site to the right, all at once.

Occupancy is stored one byte per site so that local updates are O(1);
configurations are bit-packed when serialised.
"""

from __future__ import annotations

import io
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from fep1d.renewal import WindowSample, _decompose_sites
from fep1d.streams import as_generator, stream

CONTINUOUS = "continuous"
PARALLEL_TA = "parallel-ta"
RULES = (CONTINUOUS, PARALLEL_TA)

_CHUNK = 1 << 21


class FrozenError(RuntimeError):
    """A move was requested on a configuration with no mobile particle."""


@numba.njit(cache=True)
def _is_mobile(occ, x):
    n = len(occ)
    if occ[x] == 0:
        return False
    left = occ[x - 1 if x > 0 else n - 1]
    right = occ[x + 1 if x < n - 1 else 0]
    return left != right


@numba.njit(cache=True)
def _refresh(occ, mobile, where, count, x):
    m = _is_mobile(occ, x)
    i = where[x]
    if m and i < 0:
        mobile[count] = x
        where[x] = count
        count += 1
    elif not m and i >= 0:
        last = mobile[count - 1]
        mobile[i] = last
        where[last] = i
        where[x] = -1
        count -= 1
    return count


@numba.njit(cache=True)
def _rebuild(occ, mobile, where):
    where[:] = -1
    count = 0
    for x in range(len(occ)):
        if _is_mobile(occ, x):
            mobile[count] = x
            where[x] = count
            count += 1
    return count


@numba.njit(cache=True)
def _continuous_events(occ, mobile, where, count, u, pos, max_events, t):
    n = len(occ)
    done = 0
    while count > 0 and done < max_events and len(u) - pos >= 2:
        rate = 0.5 * count
        t += -np.log(1.0 - u[pos]) / rate
        i = int(u[pos + 1] * count)
        if i >= count:
            i = count - 1
        pos += 2
        x = mobile[i]
        left = x - 1 if x > 0 else n - 1
        right = x + 1 if x < n - 1 else 0
        y = right if occ[left] == 1 else left
        occ[x] = 0
        occ[y] = 1
        for d in range(-2, 3):
            s = x + d
            if s < 0:
                s += n
            elif s >= n:
                s -= n
            count = _refresh(occ, mobile, where, count, s)
        done += 1
    return count, pos, done, t


@numba.njit(cache=True)
def _ta_run(occ, max_moves):
    """Event-driven parallel sweeps; returns (sweeps, moves, frozen)."""
    n = len(occ)
    movers = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    mark = np.zeros(n, dtype=np.uint8)
    k = 0
    for x in range(n):
        if occ[x] == 1 and occ[x - 1 if x > 0 else n - 1] == 1 and occ[x + 1 if x < n - 1 else 0] == 0:
            movers[k] = x
            k += 1
    sweeps = 0
    moves = 0
    while k > 0:
        if moves + k > max_moves:
            return sweeps, moves, False
        for i in range(k):
            x = movers[i]
            occ[x] = 0
            occ[x + 1 if x < n - 1 else 0] = 1
        moves += k
        sweeps += 1
        # new movers can only be the left neighbour of a vacated site or
        # the right neighbour of a filled one
        m = 0
        for i in range(k):
            x = movers[i]
            c1 = x - 1 if x > 0 else n - 1
            c2 = x + 2
            if c2 >= n:
                c2 -= n
            for c in (c1, c2):
                if mark[c] == 0 and occ[c] == 1 and occ[c - 1 if c > 0 else n - 1] == 1 \
                        and occ[c + 1 if c < n - 1 else 0] == 0:
                    mark[c] = 1
                    nxt[m] = c
                    m += 1
        for i in range(m):
            mark[nxt[i]] = 0
        movers, nxt = nxt, movers
        k = m
    return sweeps, moves, True


class LatticeConfig:
    """Ring occupancy together with the set of mobile particles."""

    def __init__(self, occupancy, time: float = 0.0, sweeps: int = 0):
        self.occupancy = np.ascontiguousarray(occupancy, dtype=np.uint8).copy()
        if self.occupancy.ndim != 1 or len(self.occupancy) < 2:
            raise ValueError("ring needs at least two sites")
        self.time = float(time)
        self.sweeps = int(sweeps)
        n = len(self.occupancy)
        self._mobile = np.empty(n, dtype=np.int64)
        self._where = np.empty(n, dtype=np.int64)
        self._count = _rebuild(self.occupancy, self._mobile, self._where)

    @classmethod
    def from_string(cls, text: str) -> "LatticeConfig":
        return cls(np.array([int(c) for c in text if c in "01"], dtype=np.uint8))

    def __str__(self) -> str:
        return "".join(map(str, self.occupancy.tolist()))

    @property
    def ring_size(self) -> int:
        return len(self.occupancy)

    @property
    def particle_count(self) -> int:
        return int(self.occupancy.sum(dtype=np.int64))

    @property
    def mobile_set(self) -> set[int]:
        return set(self._mobile[: self._count].tolist())

    @property
    def n_mobile(self) -> int:
        return int(self._count)

    def recompute_mobile_set(self) -> set[int]:
        """Mobile set from a full scan, independent of the incremental state."""
        occ = self.occupancy
        mob = (occ == 1) & (np.roll(occ, 1) != np.roll(occ, -1))
        return set(np.flatnonzero(mob).tolist())

    def is_frozen(self) -> bool:
        return self._count == 0

    def has_adjacent_pair(self) -> bool:
        occ = self.occupancy
        return bool(np.any((occ == 1) & (np.roll(occ, -1) == 1)))

    def copy(self) -> "LatticeConfig":
        return LatticeConfig(self.occupancy, self.time, self.sweeps)

    def _rescan(self) -> None:
        self._count = _rebuild(self.occupancy, self._mobile, self._where)


def init_bernoulli(N: int, rho: float, rng=None) -> LatticeConfig:
    if N < 2:
        raise ValueError("N must be at least 2")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    rng = as_generator(rng)
    return LatticeConfig((rng.random(N) < rho).astype(np.uint8))


def feasible_events(cfg: LatticeConfig) -> list[tuple[int, int]]:
    """All ``(site, direction)`` moves with rate 1/2 each; direction is +1 or -1."""
    occ = cfg.occupancy
    n = len(occ)
    out = []
    for x in sorted(cfg.mobile_set):
        out.append((x, +1 if occ[(x - 1) % n] == 1 else -1))
    return out


def step_continuous(cfg: LatticeConfig, rng=None) -> LatticeConfig:
    """One rejection-free event; mutates and returns ``cfg``."""
    if cfg.is_frozen():
        raise FrozenError("no mobile particle: configuration is absorbing")
    rng = as_generator(rng)
    u = rng.random(2)
    cfg._count, _, _, cfg.time = _continuous_events(
        cfg.occupancy, cfg._mobile, cfg._where, cfg._count, u, 0, 1, cfg.time
    )
    return cfg


def step_parallel_ta(cfg: LatticeConfig) -> LatticeConfig:
    """One synchronous totally asymmetric sweep; mutates and returns ``cfg``."""
    occ = cfg.occupancy
    movers = (occ == 1) & (np.roll(occ, 1) == 1) & (np.roll(occ, -1) == 0)
    occ[movers] = 0
    occ[np.roll(movers, 1)] = 1
    cfg.sweeps += 1
    cfg._rescan()
    return cfg


@dataclass
class RunResult:
    config: LatticeConfig
    freeze_time: float  # continuous time, or sweep count for parallel-ta
    frozen: bool
    events: int


def run_to_frozen(cfg: LatticeConfig, rule: str = PARALLEL_TA, max_events: int = 10**12,
                  rng=None) -> RunResult:
    """Apply moves until no particle can move or ``max_events`` moves were made.

    A run that hits the cap returns ``frozen=False`` with the partial state; on
    a ring with more particles than half the sites that is the only outcome.
    """
    if rule == PARALLEL_TA:
        sweeps, moves, frozen = _ta_run(cfg.occupancy, max_events)
        cfg.sweeps += int(sweeps)
        cfg._rescan()
        frozen = frozen and cfg.is_frozen()
        return RunResult(cfg, float(cfg.sweeps), frozen, int(moves))
    if rule != CONTINUOUS:
        raise ValueError(f"unknown rule {rule!r}")
    rng = as_generator(rng)
    total = 0
    while not cfg.is_frozen() and total < max_events:
        u = rng.random(_CHUNK)
        cfg._count, _, done, cfg.time = _continuous_events(
            cfg.occupancy, cfg._mobile, cfg._where, cfg._count, u, 0, max_events - total, cfg.time
        )
        total += int(done)
    return RunResult(cfg, cfg.time, cfg.is_frozen(), total)


def renewal_positions(occupancy: np.ndarray) -> np.ndarray:
    occ = np.asarray(occupancy)
    return np.flatnonzero((occ == 0) & (np.roll(occ, 1) == 0))


def extract_gaps(cfg) -> np.ndarray:
    """Block sizes ``X = (distance - 1)/2`` between consecutive renewal events around the ring."""
    occ = cfg.occupancy if isinstance(cfg, LatticeConfig) else np.asarray(cfg)
    if np.any((occ == 1) & (np.roll(occ, -1) == 1)):
        raise ValueError("configuration has adjacent occupied sites; not frozen")
    r = renewal_positions(occ)
    if r.size == 0:
        return np.zeros(0, dtype=np.int64)
    d = np.diff(r, append=r[0] + len(occ))
    if np.any(d % 2 == 0):
        raise ValueError("even distance between renewal events")
    return (d - 1) // 2


def gap_total_variation(gaps: np.ndarray, law, bins: int = 30) -> float:
    """Total variation over ``{0..bins} + tail`` between gap counts and a :class:`GapLaw`."""
    gaps = np.asarray(gaps)
    hist = np.bincount(np.minimum(gaps, bins + 1), minlength=bins + 2).astype(float)
    hist /= hist.sum()
    ref = np.array([law.pmf(n) for n in range(bins + 1)])
    ref = np.append(ref, max(0.0, 1.0 - ref.sum()))
    return 0.5 * float(np.abs(hist - ref).sum())


# ---------------------------------------------------------------------------
# windows cut from frozen rings
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _ring_windows(occ, L, stride, out_n, out_ren, out_sig, out_bad):
    n = len(occ)
    sites = np.empty(L + 1, dtype=np.uint8)
    k = 0
    s = 1
    while s + L - 1 < n and k < len(out_n):
        for j in range(L + 1):
            sites[j] = occ[s - 1 + j]
        a, b, c, code = _decompose_sites(sites, L)
        out_n[k] = a
        out_ren[k] = b
        out_sig[k] = c
        out_bad[k] = code != 0 or 2 * a != L - b - c
        k += 1
        s += stride
    return k


def ring_windows(occupancy: np.ndarray, L: int, stride: Optional[int] = None):
    """Decompose windows of ``L`` sites (plus left context) cut at ``stride`` spacing.

    Returns arrays ``N, N_ren, sigma, bad``.
    """
    stride = L + 100 if stride is None else stride
    occ = np.ascontiguousarray(occupancy, dtype=np.uint8)
    cap = max(0, (len(occ) - L) // stride + 1)
    out = [np.empty(cap, dtype=np.int64) for _ in range(3)]
    bad = np.empty(cap, dtype=np.bool_)
    k = _ring_windows(occ, L, stride, out[0], out[1], out[2], bad)
    return out[0][:k], out[1][:k], out[2][:k], bad[:k]


def ring_window_samples(occupancy: np.ndarray, delta: float, L: int, stride: Optional[int] = None):
    """Windows cut from a ring as :class:`WindowSample` objects."""
    stride = L + 100 if stride is None else stride
    occ = np.asarray(occupancy, dtype=np.uint8)
    s = 1
    while s + L - 1 < len(occ):
        yield WindowSample.from_sites(delta, occ[s - 1 : s + L])
        s += stride


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

_MAGIC = b"FEPF"
_VERSION = 1
_HEADER = struct.Struct("<4sHQdBIQ")
_ITEM = struct.Struct("<Id")


@dataclass
class FrozenEnsemble:
    ring_size: int
    rho: float
    rule: str
    master_seed: int
    configs: list = field(default_factory=list)  # uint8 occupancy arrays
    freeze_times: list = field(default_factory=list)
    replica_ids: list = field(default_factory=list)

    def gaps(self) -> np.ndarray:
        parts = [extract_gaps(c) for c in self.configs]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def windows(self, L: int, stride: Optional[int] = None):
        """Concatenated ``N, N_ren, sigma, bad`` arrays and per-replica window counts."""
        cols = [[], [], [], []]
        sizes = []
        for c in self.configs:
            res = ring_windows(c, L, stride)
            for col, arr in zip(cols, res):
                col.append(arr)
            sizes.append(len(res[0]))
        return tuple(np.concatenate(col) for col in cols), sizes

    def window_records(self, L: int, stride: Optional[int] = None):
        delta = 0.5 - self.rho
        for c in self.configs:
            for w in ring_window_samples(c, delta, L, stride):
                yield w.to_record()

    def write(self, path_or_file) -> None:
        if not hasattr(path_or_file, "write"):
            with open(path_or_file, "wb") as fh:
                self.write(fh)
            return
        fh = path_or_file
        fh.write(_HEADER.pack(_MAGIC, _VERSION, self.ring_size, self.rho,
                              RULES.index(self.rule), len(self.configs), self.master_seed))
        for rid, t, c in zip(self.replica_ids, self.freeze_times, self.configs):
            fh.write(_ITEM.pack(rid, t))
            fh.write(np.packbits(c).tobytes())

    @classmethod
    def read(cls, path_or_file) -> "FrozenEnsemble":
        if not hasattr(path_or_file, "read"):
            with open(path_or_file, "rb") as fh:
                return cls.read(fh)
        fh = path_or_file
        magic, version, n, rho, rule, count, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("not a frozen-ensemble file")
        ens = cls(n, rho, RULES[rule], seed)
        nbytes = (n + 7) // 8
        for _ in range(count):
            rid, t = _ITEM.unpack(fh.read(_ITEM.size))
            bits = np.unpackbits(np.frombuffer(fh.read(nbytes), dtype=np.uint8))[:n]
            ens.replica_ids.append(rid)
            ens.freeze_times.append(t)
            ens.configs.append(bits.astype(np.uint8))
        return ens

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()


class NotFrozenError(RuntimeError):
    def __init__(self, replica: int, result: RunResult):
        super().__init__(f"replica {replica} not frozen after {result.events} events")
        self.replica = replica
        self.result = result


def _one_replica(args):
    N, rho, rule, seed, replica, max_events = args
    rng = stream(seed, replica)
    cfg = init_bernoulli(N, rho, rng)
    res = run_to_frozen(cfg, rule, max_events, rng)
    return replica, res


def simulate_ensemble(N: int, rho: float, rule: str, replicas: int, master_seed: int = 0,
                      max_events: int = 10**12, workers: int = 1) -> FrozenEnsemble:
    """Run independent replicas to absorption; results merge in replica order."""
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    jobs = [(N, rho, rule, master_seed, i, max_events) for i in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replica, jobs))
    else:
        results = [_one_replica(j) for j in jobs]
    ens = FrozenEnsemble(N, rho, rule, master_seed)
    for replica, res in results:
        if not res.frozen:
            raise NotFrozenError(replica, res)
        ens.configs.append(res.config.occupancy)
        ens.freeze_times.append(res.freeze_time)
        ens.replica_ids.append(replica)
    return ens
