import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fep1d.dynamics import (
    CONTINUOUS,
    PARALLEL_TA,
    FrozenEnsemble,
    FrozenError,
    LatticeConfig,
    NotFrozenError,
    extract_gaps,
    feasible_events,
    gap_total_variation,
    init_bernoulli,
    renewal_positions,
    ring_windows,
    run_to_frozen,
    simulate_ensemble,
    step_continuous,
    step_parallel_ta,
)
from fep1d.renewal import GapLaw, _decompose_sites
from fep1d.streams import stream


def mobile_oracle(occ):
    """Occupied sites with exactly one occupied neighbour (the other is the empty target)."""
    n = len(occ)
    out = set()
    for x in range(n):
        if occ[x] and (occ[(x - 1) % n] + occ[(x + 1) % n]) == 1:
            out.add(x)
    return out


# --- initial state ---------------------------------------------------------


def test_init_density():
    cfg = init_bernoulli(10**6, 0.45, stream(1))
    p = cfg.particle_count / 10**6
    assert abs(p - 0.45) < 3 * math.sqrt(0.45 * 0.55 / 10**6)


def test_init_full_ring_has_no_mobile_particle():
    cfg = init_bernoulli(4, 1.0, stream(0))
    assert str(cfg) == "1111"
    assert cfg.mobile_set == set()


def test_init_reproducible():
    a = init_bernoulli(1000, 0.3, stream(5))
    b = init_bernoulli(1000, 0.3, stream(5))
    assert np.array_equal(a.occupancy, b.occupancy)


def test_init_rejects():
    with pytest.raises(ValueError):
        init_bernoulli(1, 0.5)
    with pytest.raises(ValueError):
        init_bernoulli(10, 0.0)


# --- mobile set ------------------------------------------------------------


@given(st.lists(st.integers(0, 1), min_size=2, max_size=64))
@settings(max_examples=200, deadline=None)
def test_mobile_set_matches_definition(bits):
    cfg = LatticeConfig(np.array(bits, dtype=np.uint8))
    assert cfg.mobile_set == mobile_oracle(bits)
    assert cfg.recompute_mobile_set() == cfg.mobile_set


def test_local_global_consistency_continuous():
    rng = stream(42)
    cfg = init_bernoulli(512, 0.6, rng)  # above 1/2 the ring never freezes
    n0 = cfg.particle_count
    for _ in range(10_000):
        step_continuous(cfg, rng)
        assert cfg.mobile_set == cfg.recompute_mobile_set()
        assert cfg.particle_count == n0


def test_local_global_consistency_near_absorption():
    rng = stream(7)
    cfg = init_bernoulli(512, 0.45, rng)
    while not cfg.is_frozen():
        step_continuous(cfg, rng)
        assert cfg.mobile_set == cfg.recompute_mobile_set()
    assert not cfg.has_adjacent_pair()


# --- continuous-time step --------------------------------------------------


def test_feasible_events_example():
    cfg = LatticeConfig.from_string("0110")
    assert feasible_events(cfg) == [(1, -1), (2, +1)]


def test_continuous_event_probabilities_and_time():
    counts = {"1010": 0, "0101": 0}
    times = []
    rng = stream(3)
    for _ in range(4000):
        cfg = LatticeConfig.from_string("0110")
        step_continuous(cfg, rng)
        counts[str(cfg)] += 1
        times.append(cfg.time)
    assert abs(counts["1010"] / 4000 - 0.5) < 4 * math.sqrt(0.25 / 4000)
    # total rate 1: holding time is Exp(1)
    assert abs(np.mean(times) - 1.0) < 4 / math.sqrt(4000)


def test_continuous_refuses_frozen():
    cfg = LatticeConfig.from_string("100100")
    assert cfg.is_frozen()
    with pytest.raises(FrozenError):
        step_continuous(cfg, stream(0))


# --- parallel totally asymmetric step -------------------------------------


@pytest.mark.parametrize("before,after", [("0110", "0101"), ("100100", "100100"), ("1110", "1101")])
def test_parallel_examples(before, after):
    cfg = LatticeConfig.from_string(before)
    step_parallel_ta(cfg)
    assert str(cfg) == after
    assert cfg.sweeps == 1


@given(st.integers(0, 10**6), st.integers(8, 300), st.floats(0.05, 0.5))
@settings(max_examples=60, deadline=None)
def test_parallel_run_matches_repeated_sweeps(seed, N, rho):
    cfg = init_bernoulli(N, rho, stream(seed))
    ref = cfg.copy()
    # rings with more than N/2 particles never freeze, so cap the work
    res = run_to_frozen(cfg, PARALLEL_TA, max_events=N * N)
    sweeps = 0
    while not ref.is_frozen() and sweeps < 10 * N:
        step_parallel_ta(ref)
        sweeps += 1
    assert res.frozen == ref.is_frozen()
    if res.frozen:
        assert np.array_equal(res.config.occupancy, ref.occupancy)
        assert res.freeze_time == sweeps


# --- absorption ------------------------------------------------------------


@pytest.mark.parametrize("rule", [PARALLEL_TA, CONTINUOUS])
def test_absorption_and_conservation(rule):
    cfg = init_bernoulli(10**5, 0.45, stream(11))
    n0 = cfg.particle_count
    res = run_to_frozen(cfg, rule, max_events=10**9, rng=stream(12))
    assert res.frozen
    assert res.config.particle_count == n0
    assert not res.config.has_adjacent_pair()
    assert res.config.recompute_mobile_set() == set()


def test_absorption_large_ring_parallel():
    cfg = init_bernoulli(10**6, 0.49, stream(2))
    res = run_to_frozen(cfg, PARALLEL_TA, max_events=10**10)
    assert res.frozen


def test_not_frozen_is_reported():
    cfg = init_bernoulli(1000, 0.45, stream(1))
    res = run_to_frozen(cfg, CONTINUOUS, max_events=5, rng=stream(2))
    assert not res.frozen and res.events == 5
    with pytest.raises(NotFrozenError):
        simulate_ensemble(11, 0.5, PARALLEL_TA, 1, 0, max_events=10**4)


def test_dense_ring_never_freezes():
    cfg = LatticeConfig.from_string("1101101")
    res = run_to_frozen(cfg, PARALLEL_TA, max_events=1000)
    assert not res.frozen


def test_unknown_rule():
    with pytest.raises(ValueError):
        run_to_frozen(LatticeConfig.from_string("0110"), "sideways")


# --- gaps --------------------------------------------------------------------


def test_gaps_examples():
    assert extract_gaps(LatticeConfig.from_string("100100")).tolist() == [1, 1]
    assert renewal_positions(np.array([1, 0, 0, 1, 0, 0])).tolist() == [2, 5]
    assert extract_gaps(LatticeConfig.from_string("01" * 8)).size == 0
    ring = LatticeConfig.from_string("0101001010" + "0")
    gaps = extract_gaps(ring)
    r = renewal_positions(ring.occupancy)
    d = np.diff(np.append(r, r[0] + ring.ring_size))
    assert np.all(d % 2 == 1)
    assert gaps.tolist() == ((d - 1) // 2).tolist()


def test_gaps_reject_adjacent_pair():
    with pytest.raises(ValueError):
        extract_gaps(LatticeConfig.from_string("0110"))


@pytest.mark.parametrize("rule", [PARALLEL_TA, CONTINUOUS])
def test_frozen_gap_law(rule):
    ens = simulate_ensemble(10**5, 0.45, rule, 10, master_seed=5)
    gaps = ens.gaps()
    assert gaps.size >= 10**5
    assert gap_total_variation(gaps, GapLaw(0.05)) < 0.01


# --- windows and ensembles ---------------------------------------------------


def test_ring_windows_agree_with_scalar_decomposition():
    ens = simulate_ensemble(20_000, 0.45, PARALLEL_TA, 1, master_seed=1)
    occ = ens.configs[0]
    (N, R, S, bad) = ring_windows(occ, 37, stride=50)
    assert not bad.any()
    for i in range(len(N)):
        s = 1 + 50 * i
        sites = np.ascontiguousarray(occ[s - 1 : s + 37])
        assert tuple(_decompose_sites(sites, 37)[:3]) == (N[i], R[i], S[i])
        assert N[i] == occ[s : s + 37].sum()


def test_ensemble_reproducible_and_worker_independent():
    a = simulate_ensemble(5000, 0.45, CONTINUOUS, 3, master_seed=9)
    b = simulate_ensemble(5000, 0.45, CONTINUOUS, 3, master_seed=9, workers=2)
    assert a.to_bytes() == b.to_bytes()
    c = simulate_ensemble(5000, 0.45, CONTINUOUS, 3, master_seed=10)
    assert a.to_bytes() != c.to_bytes()


def test_ensemble_serialisation_round_trip(tmp_path):
    ens = simulate_ensemble(1001, 0.4, PARALLEL_TA, 4, master_seed=3)
    path = tmp_path / "e.bin"
    ens.write(path)
    back = FrozenEnsemble.read(path)
    assert (back.ring_size, back.rule, back.master_seed, back.replica_ids) == (1001, PARALLEL_TA, 3, [0, 1, 2, 3])
    assert back.rho == ens.rho
    assert back.freeze_times == ens.freeze_times
    for x, y in zip(ens.configs, back.configs):
        assert np.array_equal(x, y)
    with pytest.raises(ValueError):
        FrozenEnsemble.read(io.BytesIO(b"XXXX" + bytes(40)))


def test_ensemble_configs_absorbing():
    ens = simulate_ensemble(3000, 0.47, CONTINUOUS, 2, master_seed=1)
    for c in ens.configs:
        assert LatticeConfig(c).is_frozen()
