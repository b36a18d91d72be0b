import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fep1d.renewal import (
    FirstRenewalLaw,
    GapLaw,
    TableCapExceeded,
    WindowSample,
    catalan,
    first_renewal_pmf,
    gap_pmf,
    gap_tail,
    renewal_count_tail_bound_check,
    renewal_flags,
    sample_gap,
    sample_palm_renewal_counts,
    sample_window,
    sample_window_batch,
)
from fep1d.streams import stream


def catalan_dp(n):
    """Oracle: C_{m+1} = sum_i C_i C_{m-i}."""
    c = [1]
    for m in range(n):
        c.append(sum(c[i] * c[m - i] for i in range(m + 1)))
    return c[n]


def gap_pmf_exact(delta, n):
    rho = Fraction(1, 2) - Fraction(delta)
    return catalan_dp(n) * rho**n * (1 - rho) ** (n + 1)


# --- Catalan numbers ------------------------------------------------------


@pytest.mark.parametrize("n,value", [(0, 1), (3, 5), (10, 16796)])
def test_catalan_examples(n, value):
    assert catalan(n) == value


def test_catalan_matches_recurrence():
    assert [catalan(n) for n in range(25)] == [catalan_dp(n) for n in range(25)]


def test_catalan_rejects_negative():
    with pytest.raises(ValueError):
        catalan(-1)


# --- gap law ---------------------------------------------------------------


@pytest.mark.parametrize("delta,n,value", [(0.0, 0, 0.5), (0.0, 3, 0.0390625), (0.1, 1, 0.144)])
def test_gap_pmf_examples(delta, n, value):
    assert gap_pmf(GapLaw(delta), n) == pytest.approx(value, rel=1e-14)


@pytest.mark.parametrize("delta", ["0", "1/10", "1/20", "3/10", "1/1000"])
def test_gap_pmf_matches_rational_formula(delta):
    law = GapLaw(float(Fraction(delta)))
    for n in range(60):
        assert law.pmf(n) == pytest.approx(float(gap_pmf_exact(Fraction(delta), n)), rel=1e-12)


@pytest.mark.parametrize("delta,L,value", [(0.0, 1, 0.5), (0.0, 3, 0.375), (0.1, 0, 1.0), (0.0, 0, 1.0)])
def test_gap_tail_examples(delta, L, value):
    assert gap_tail(GapLaw(delta), L) == pytest.approx(value, rel=1e-14)


def test_zero_delta_tail_is_central_binomial():
    law = GapLaw(0.0)
    for n in range(0, 200):
        # q(2n+1) = P(X >= n+1) = binom(2n+2, n+1) / 4^(n+1)
        expect = math.comb(2 * n + 2, n + 1) / 4 ** (n + 1)
        assert law.tail(2 * n + 1) == pytest.approx(expect, rel=1e-11)
        assert law.tail(2 * n + 2) == pytest.approx(expect, rel=1e-11)


@pytest.mark.parametrize("delta", [0.01, 0.05, 0.1, 0.3])
def test_gap_law_mean_and_normalisation(delta):
    law = GapLaw(delta)
    law.ensure(int(40 / (4 * delta * delta)) + 100)
    p = law.pmf_table
    n = np.arange(len(p))
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert (n * p).sum() == pytest.approx((0.5 - delta) / (2 * delta), rel=1e-10)
    assert law.mean() == pytest.approx((0.5 - delta) / (2 * delta))


@pytest.mark.parametrize("delta", [0.0, 0.02, 0.2])
def test_cdf_monotone_and_tail_bound(delta):
    law = GapLaw(delta)
    law.ensure(5000)
    cdf = law.cdf_table
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[-1] <= 1.0 + 1e-15
    if delta > 0:
        for m in (0, 10, 100, 1000, 4000):
            assert 1.0 - law.cdf(m) <= law.tail_bound(m) * (1 + 1e-9) + 1e-15
    else:
        # slow algebraic approach to 1
        assert 1.0 - cdf[4999] == pytest.approx(math.comb(10000, 5000) / 4**5000, rel=1e-9)


def test_table_cap():
    law = GapLaw(0.0, cap=1000)
    with pytest.raises(TableCapExceeded):
        law.ensure(10_000)


def test_gap_law_rejects_bad_delta():
    for d in (-0.1, 0.5, 0.7):
        with pytest.raises(ValueError):
            GapLaw(d)


def test_gap_sampler_mean_at_delta_01():
    law = GapLaw(0.1)
    x = law.sample(stream(1), size=10**6)
    y = 2 * x + 1
    se = y.std() / math.sqrt(len(y))
    assert abs(y.mean() - 5.0) < 3 * se


def test_gap_sampler_zero_delta_censored():
    law = GapLaw(0.0)
    x = law.sample(stream(2), size=10**6, censor=10_000)
    p0 = np.mean(x == 0)
    assert abs(p0 - 0.5) < 3 * math.sqrt(0.25 / len(x))
    assert x.max() <= 10_001


def test_gap_sampler_reproducible():
    law = GapLaw(0.05)
    a = law.sample(stream(7), size=1000)
    b = law.sample(stream(7), size=1000)
    assert np.array_equal(a, b)
    assert sample_gap(law, stream(3)) == sample_gap(law, stream(3))


# --- first renewal ---------------------------------------------------------


def test_first_renewal_examples():
    law = FirstRenewalLaw(0.1)
    assert first_renewal_pmf(law, 1) == pytest.approx(0.2)
    # 2 delta (1 - P(X = 0)) with P(X = 0) = 1 - rho = 0.6
    assert first_renewal_pmf(law, 2) == pytest.approx(2 * 0.1 * (1 - gap_pmf(GapLaw(0.1), 0)))
    assert first_renewal_pmf(law, 2) == pytest.approx(0.08)
    assert law.cdf(10**5) >= 0.999999


@pytest.mark.parametrize("delta", [0.02, 0.1, 0.25])
def test_first_renewal_normalises(delta):
    law = FirstRenewalLaw(delta)
    L = int(60 / delta**2)
    assert law.pmf_array(L).sum() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("delta", [0.05, 0.2])
def test_first_renewal_parity_beyond(delta):
    law = FirstRenewalLaw(delta)
    big = int(80 / delta**2)
    p = law.pmf_array(big)
    for L in (0, 1, 5, 10, 37):
        beyond = p[L + 1 :]
        tail_even = beyond[np.arange(L + 1, big + 1) % 2 == 0].sum()
        assert law.even_beyond(L) == pytest.approx(tail_even / beyond.sum(), abs=1e-9)


def test_first_renewal_rejects_zero_delta():
    with pytest.raises(ValueError):
        FirstRenewalLaw(0.0)


# --- windows ---------------------------------------------------------------


def test_renewal_flags_hand_example():
    # context 1, sites 1 0 0 1 0: the renewal sits at position 3
    sites = np.array([1, 1, 0, 0, 1, 0], dtype=np.uint8)
    assert renewal_flags(sites).tolist() == [0, 0, 1, 0, 0]
    w = WindowSample.from_sites(0.1, sites)
    assert w.first_renewal_position == 3


@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.01, 0.05, 0.2, 0.4]), st.integers(1, 60))
@settings(max_examples=60, deadline=None)
def test_sampled_windows_are_frozen_and_round_trip(seed, delta, L):
    w = sample_window(delta, L, stream(seed))
    s = w.sites()
    assert len(s) == L + 1
    assert not np.any((s[:-1] == 1) & (s[1:] == 1))
    back = WindowSample.from_record(w.to_record())
    assert np.array_equal(back.sites(), s)
    assert back.first_renewal_position == w.first_renewal_position


@given(st.integers(0, 10**6), st.sampled_from([0.01, 0.1, 0.3]), st.integers(1, 40))
@settings(max_examples=40, deadline=None)
def test_fill_rule_left_of_first_renewal(seed, delta, L):
    w = sample_window(delta, L, stream(seed))
    F = w.first_renewal_position
    if F is None:
        # no renewal inside: the whole window alternates
        s = w.sites()
        assert np.all(s[1:] != s[:-1])
        return
    s = w.sites()
    for j in range(0, F):
        assert s[j] == (1 if (F - j) % 2 == 0 else 0)


def test_window_density_and_renewal_density():
    delta, L, n = 0.05, 1000, 10**6
    b = sample_window_batch(delta, L, n, stream(5))
    assert b.identity_failures == 0
    dens = b.N.mean() / L
    se = b.N.std() / math.sqrt(n) / L
    assert abs(dens - 0.45) < 3 * se
    ren = b.N_ren.mean() / L
    se = b.N_ren.std() / math.sqrt(n) / L
    assert abs(ren - 0.1) < 3 * se


def test_site_one_density():
    rng = stream(9)
    law = GapLaw(0.05)
    n = 20_000
    occ = np.array([sample_window(0.05, 1, rng, law).occupancy[0] for _ in range(n)])
    assert abs(occ.mean() - 0.45) < 3 * math.sqrt(0.45 * 0.55 / n)


def test_window_batch_reproducible():
    a = sample_window_batch(0.05, 101, 5000, stream(3))
    b = sample_window_batch(0.05, 101, 5000, stream(3))
    assert np.array_equal(a.N, b.N) and np.array_equal(a.sigma, b.sigma)


def test_zero_delta_windows_alternate():
    b = sample_window_batch(0.0, 11, 2000, stream(1))
    assert np.all(b.N_ren == 0)
    assert set(np.unique(b.N).tolist()) <= {5, 6}


# --- renewal-count tail bound ---------------------------------------------


@pytest.mark.parametrize("delta,L,nmax", [(0.1, 50, 20), (0.0, 10, 10)])
def test_renewal_count_tail_bound(delta, L, nmax):
    counts = sample_palm_renewal_counts(delta, L, 10**5, stream(4))
    assert renewal_count_tail_bound_check(delta, L, range(1, nmax + 1), counts)


def test_renewal_count_tail_bound_trivial_region():
    counts = np.zeros(1000, dtype=np.int64)
    assert renewal_count_tail_bound_check(0.1, 50, [200], counts)
