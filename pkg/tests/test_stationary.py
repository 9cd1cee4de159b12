import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st
from scipy import stats

from bdpu.errors import RegimeError, StateExceedsCapacity
from bdpu.partition import AllelicPartition, bounded_states, partitions_of
from bdpu.stationary import (
    LimitLaw,
    esf,
    expected_size_mass,
    j_pmf,
    k_mean,
    k_pmf,
    log_esf,
    log_nb_pmf,
    log_pi,
    log_pi_L,
    median_weight,
    mixing_weights,
    mixture_identity,
    norm_marginal_by_enumeration,
    pi,
    pi_L,
    poisson_truncation,
    sample_augmented_poisson,
    sample_pi_L,
    supercritical_marginal_pmf,
    theta_closed_form,
    theta_limit,
    theta_sum,
    tilted_nb_mean,
    tilted_nb_pmf,
)


def exact_theta(L, beta, lam, mu):
    """Rational solution of the tridiagonal system by sympy."""
    b = sympy.Rational(beta)
    A = sympy.zeros(L, L)
    for i in range(L):
        A[i, i] = 1
        if i > 0:
            A[i, i - 1] = -b
        if i < L - 1:
            A[i, i + 1] = -(1 - b)
    rhs = sympy.zeros(L, 1)
    rhs[0] += b * sympy.Rational(lam)
    rhs[L - 1] += (1 - b) * sympy.Rational(mu)
    return [float(v) for v in A.LUsolve(rhs)]


@pytest.mark.parametrize("L", [1, 2, 5, 12])
@pytest.mark.parametrize("beta", ["1/10", "1/3", "1/2", "7/10", "19/20"])
def test_theta_matches_exact_rational_solve(L, beta):
    b = float(Fraction(beta))
    th = theta_closed_form(L, b, 2.0, 0.5)
    np.testing.assert_allclose(th.values, exact_theta(L, Fraction(beta), 2, Fraction(1, 2)),
                               rtol=1e-13)


def test_theta_half_branch_frozen_values():
    th = theta_closed_form(10, 0.5, 1.0, 3.0)
    # w_i = (L - i + 1) / (L + 1)
    assert th[1] == pytest.approx(13 / 11, rel=1e-15)
    assert th[10] == pytest.approx(31 / 11, rel=1e-15)
    assert theta_sum(10, 0.5, 1.0, 3.0) == 20.0


def test_single_component_is_a_mixture_of_the_endpoints():
    th = theta_closed_form(1, 0.3, 1.0, 3.0)
    assert th[1] == pytest.approx(0.3 * 1 + 0.7 * 3, rel=1e-15)


@given(st.integers(2, 300), st.floats(0.01, 0.99), st.floats(0.1, 10), st.floats(0.0, 10))
@settings(max_examples=200)
def test_weights_and_convexity(L, beta, lam, mu):
    w, c = mixing_weights(L, beta)
    assert np.all((w >= 0) & (w <= 1))
    np.testing.assert_allclose(w + c, 1, atol=1e-12)
    assert np.all(np.diff(w) <= 1e-15)
    th = theta_closed_form(L, beta, lam, mu)
    lo, hi = min(lam, mu), max(lam, mu)
    assert np.all(th.values >= lo * (1 - 1e-12)) and np.all(th.values <= hi * (1 + 1e-12))
    assert theta_sum(L, beta, lam, mu) == pytest.approx(math.fsum(th.values), rel=1e-10)


@pytest.mark.parametrize("eps", [1e-7, -1e-7])
def test_continuity_across_one_half(eps):
    near = theta_closed_form(40, 0.5 + eps, 1.0, 3.0).values
    at = theta_closed_form(40, 0.5, 1.0, 3.0).values
    np.testing.assert_allclose(near, at, rtol=1e-5)
    assert theta_sum(40, 0.5 + eps, 1.0, 3.0) == pytest.approx(80.0, rel=1e-5)


@pytest.mark.parametrize("L", [1, 3, 9])
def test_median_weight(L):
    w, _ = mixing_weights(L, 0.3)
    assert median_weight(L, 0.3) == pytest.approx(w[(L + 1) // 2 - 1], rel=1e-12)


@pytest.mark.parametrize("beta, target", [(0.25, lambda i: 1.5 * (1 / 3) ** i),
                                          (0.7, lambda i: 1.5)])
def test_theta_limit_in_L(beta, target):
    L = 2000
    th = theta_closed_form(L, beta, 1.5, 1 / L**2)
    for i in (1, 2, 5):
        assert th[i] == pytest.approx(target(i), rel=1e-9, abs=2 / L**2)
        assert theta_limit(i, beta, 1.5) == pytest.approx(target(i), rel=1e-12)


def test_pi_L_sums_to_one_over_enumerated_states():
    th = theta_closed_form(3, 0.4, 1.0, 0.8)
    total = math.fsum(pi_L(m, th) for m in bounded_states(3, 60))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_pi_L_rejects_large_blocks():
    with pytest.raises(StateExceedsCapacity):
        log_pi_L(AllelicPartition({4: 1}), theta_closed_form(3, 0.4, 1.0, 0.8))


def test_pi_L_sampler_matches_pmf():
    th = theta_closed_form(2, 0.4, 1.0, 0.8)
    draws = sample_pi_L(th, np.random.default_rng(0), 200000)
    freq = np.mean((draws[:, 0] == 1) & (draws[:, 1] == 1))
    p = pi_L(AllelicPartition({1: 1, 2: 1}), th)
    assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / 200000)


def test_pi_at_origin():
    # beta = 1/3 gives p = 1/2 and pi(0) = (1-p)^(lam+1) / 2
    for lam in (0.5, 1.0, 3.0):
        law = LimitLaw(1 / 3, lam)
        assert pi(AllelicPartition(), law) == pytest.approx(0.5 ** (lam + 1) / 2, rel=1e-14)
    assert tilted_nb_pmf(0, LimitLaw(1 / 3, 1.0)) == pytest.approx(1 / 8, rel=1e-14)


def test_regime_errors():
    law = LimitLaw(0.6, 1.0)
    assert law.regime == "supercritical"
    for f in (lambda: log_pi(AllelicPartition(), law), lambda: j_pmf(0, law),
              lambda: k_pmf(0, law), lambda: tilted_nb_pmf(0, law),
              lambda: mixture_identity(AllelicPartition(), law)):
        with pytest.raises(RegimeError):
            f()


def test_nb_pmf_matches_scipy():
    for n in range(0, 40):
        ref = stats.nbinom.logpmf(n, 1.7, 1 - 0.4)
        assert log_nb_pmf(n, 1.7, 0.4) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("beta, lam", [(0.3, 1.0), (0.1, 2.5), (0.45, 0.5)])
def test_tilted_nb_normalised_and_mean(beta, lam):
    law = LimitLaw(beta, lam)
    n = np.arange(3000)
    pmf = np.array([tilted_nb_pmf(int(k), law) for k in n])
    assert math.fsum(pmf) == pytest.approx(1.0, abs=1e-10)
    assert tilted_nb_mean(law) == pytest.approx(np.dot(n, pmf), rel=1e-10)


def test_tilted_nb_detailed_balance():
    law = LimitLaw(0.3, 1.0)
    b, lam = 0.3, 1.0
    for n in range(1, 51):
        up = tilted_nb_pmf(n - 1, law) * b * (lam + n - 1) / (b * lam + n - 1)
        down = tilted_nb_pmf(n, law) * (1 - b) * n / (b * lam + n)
        assert up == pytest.approx(down, rel=1e-12)


def test_esf_small_cases():
    assert esf(1, AllelicPartition({1: 1}), 2.0) == pytest.approx(1.0)
    assert esf(0, AllelicPartition(), 2.0) == 1.0
    lam = 2.5
    assert esf(2, AllelicPartition({1: 2}), lam) == pytest.approx(lam / (lam + 1))
    assert esf(2, AllelicPartition({2: 1}), lam) == pytest.approx(1 / (lam + 1))
    assert log_esf(3, AllelicPartition({1: 1}), lam) == -math.inf


@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_esf_normalised(lam):
    assert math.fsum(esf(6, m, lam) for m in partitions_of(6)) == pytest.approx(1.0, abs=1e-12)


def test_esf_block_count_mean():
    # E[K_n] = sum_{k<n} lam / (lam + k)
    lam, n = 1.3, 9
    mean = math.fsum(esf(n, m, lam) * m.block_count for m in partitions_of(n))
    assert mean == pytest.approx(sum(lam / (lam + k) for k in range(n)), rel=1e-12)


@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_mixture_identity_all_partitions(lam):
    law = LimitLaw(0.3, lam)
    for n in range(0, 11):
        for m in partitions_of(n):
            lhs, rhs = mixture_identity(m, law)
            assert lhs == pytest.approx(rhs, rel=1e-12)


def test_norm_marginal_equals_tilted_nb():
    law = LimitLaw(0.3, 1.0)
    for n in range(9):
        assert norm_marginal_by_enumeration(n, law) == pytest.approx(tilted_nb_pmf(n, law), rel=1e-12)


def test_j_law():
    law = LimitLaw(1 / 3, 1.0)
    assert j_pmf(0, law) == pytest.approx(0.25)
    assert 1 - j_pmf(0, law) == pytest.approx(0.75)
    assert math.fsum(j_pmf(j, LimitLaw(0.3, 1.0)) for j in range(200)) == pytest.approx(1, abs=1e-12)
    assert j_pmf(-1, law) == 0


def test_k_law():
    law = LimitLaw(1 / 3, 1.0)
    assert law.rate_total == pytest.approx(math.log(2))
    ks = np.arange(60)
    pmf = k_pmf(ks, law)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.dot(ks, pmf) == pytest.approx(k_mean(law), rel=1e-12)
    assert k_mean(law) == pytest.approx(0.75 + math.log(2))
    assert k_mean(law, "j0") == pytest.approx(0.25 + math.log(2))


def test_k_law_against_enumeration():
    law = LimitLaw(0.3, 1.0)
    pk = np.zeros(41)
    for n in range(40):
        for m in partitions_of(n):
            pk[m.block_count] += pi(m, law)
    np.testing.assert_allclose(pk[:8], k_pmf(np.arange(8), law), atol=1e-9)


def test_expected_size_mass_against_enumeration():
    law = LimitLaw(0.3, 1.0)
    acc = np.zeros(6)
    mass = 0.0
    for n in range(41):
        for m in partitions_of(n):
            p = pi(m, law)
            mass += p
            for i in range(1, 6):
                acc[i] += p * i * m[i]
    assert mass > 1 - 1e-8
    for i in range(1, 6):
        assert acc[i] == pytest.approx(expected_size_mass(i, law), rel=1e-7)


def test_size_mass_is_not_exactly_proportional_to_theta():
    law = LimitLaw(0.3, 1.0)
    ratios = [expected_size_mass(i, law) / law.theta(i) for i in range(1, 6)]
    assert np.all(np.diff(ratios) > 0)


def test_supercritical_marginal():
    assert supercritical_marginal_pmf(2, 0, 1.0) == pytest.approx(math.exp(-0.5))


def test_poisson_truncation():
    law = LimitLaw(0.3, 1.0)
    I, tail = poisson_truncation(law)
    assert tail < 1e-12
    assert sum(law.theta(i) / i for i in range(I + 1, I + 400)) == pytest.approx(tail, rel=1e-6, abs=1e-15)


def test_augmented_sampler_small_state_frequencies():
    law = LimitLaw(0.3, 1.0)
    s = sample_augmented_poisson(law, np.random.default_rng(1), 200000)
    assert s.truncation_mass < 1e-12
    origin = np.mean(s.counts.sum(axis=1) == 0)
    p0 = pi(AllelicPartition(), law)
    assert abs(origin - p0) < 4 * math.sqrt(p0 * (1 - p0) / 200000)
    assert np.mean(s.J == 0) == pytest.approx(j_pmf(0, law), abs=0.005)
