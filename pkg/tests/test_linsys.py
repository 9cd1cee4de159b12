import math
import warnings
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdpu.errors import ParameterError, SingularSystem
from bdpu.linsys import (
    TridiagonalSystem,
    _thomas,
    determinant_closed_form,
    determinant_recursion,
    diagnostic_csv,
    inverse_column_entries,
    log_determinant,
    monotonicity_margin,
    monotonicity_scan,
    solve_numeric,
    theta_from_inverse,
)
from bdpu.partition import MuSchedule
from bdpu.stationary import theta_closed_form

BETAS = [k / 16 for k in range(17)]


def exact_det(l, beta):
    b = Fraction(beta)
    prev, cur = Fraction(1), Fraction(1)
    for _ in range(l - 1):
        prev, cur = cur, cur - b * (1 - b) * prev
    return cur


@pytest.mark.parametrize("beta", BETAS)
def test_determinant_closed_form_matches_exact_recursion(beta):
    for l in range(0, 61):
        ref = float(exact_det(l, beta))
        assert determinant_recursion(l, beta) == pytest.approx(ref, rel=1e-12)
        assert determinant_closed_form(l, beta) == pytest.approx(ref, rel=1e-12)


def test_determinant_initial_values_and_half():
    assert determinant_recursion(1, 0.3) == 1
    assert determinant_recursion(2, 0.3) == pytest.approx(1 - 0.21)
    for l in range(0, 61):
        assert determinant_closed_form(l, 0.5) == math.ldexp(l + 1, -l)
        assert determinant_recursion(l, 0.5) == (l + 1) / 2**l
    assert determinant_recursion(2, 0.5) == 0.75
    for b in (0.0, 1.0):
        assert determinant_closed_form(40, b) == 1 == determinant_recursion(40, b)


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.7, 0.9])
def test_determinant_decays_and_lower_bound(beta):
    for l in range(2, 60):
        assert determinant_closed_form(l, beta) > (beta * (1 - beta)) ** (l - 1)
    assert determinant_closed_form(2000, beta) < 1e-80


@pytest.mark.parametrize("beta", [0.2, 0.45, 0.5, 0.8])
def test_log_determinant_large_l(beta):
    mpmath.mp.dps = 60
    b = mpmath.mpf(beta)
    for l in (100, 150, 200):
        if beta == 0.5:
            ref = mpmath.log((l + 1) * mpmath.mpf(2) ** (-l))
        else:
            ref = mpmath.log(((1 - b) ** (l + 1) - b ** (l + 1)) / (1 - 2 * b))
        assert log_determinant(l, beta) == pytest.approx(float(ref), rel=1e-9)


def test_system_validation_and_dense_form():
    s = TridiagonalSystem(3, 0.25)
    np.testing.assert_array_equal(
        s.dense(), [[1, -0.75, 0], [-0.25, 1, -0.75], [0, -0.25, 1]])
    with pytest.raises(ParameterError):
        TridiagonalSystem(0, 0.3)
    with pytest.raises(ParameterError):
        TridiagonalSystem(2, 1.5)


def test_one_by_one_system():
    th = solve_numeric(TridiagonalSystem(1, 0.3), 1.0, 3.0)
    assert th[1] == pytest.approx(0.3 + 0.7 * 3, rel=1e-15)


def test_thomas_raises_on_zero_pivot():
    with pytest.raises(SingularSystem):
        _thomas(-1.0, 1.0, -1.0, np.ones(3))


@given(st.integers(1, 200), st.floats(0.01, 0.99), st.floats(0.1, 10), st.floats(0.01, 10))
@settings(max_examples=150)
def test_numeric_solve_properties(L, beta, lam, mu):
    s = TridiagonalSystem(L, beta)
    th = solve_numeric(s, lam, mu)
    assert s.residual(th.values, lam, mu) <= 1e-10 * max(lam, mu)
    assert s.redundant_residual(th.values, lam, mu) <= 1e-10 * max(lam, mu)
    lo, hi = min(lam, mu), max(lam, mu)
    assert np.all(th.values >= lo * (1 - 1e-10)) and np.all(th.values <= hi * (1 + 1e-10))
    ref = theta_closed_form(L, beta, lam, mu).values
    np.testing.assert_allclose(th.values, ref, rtol=1e-10)
    np.testing.assert_allclose(th.values, np.linalg.solve(s.dense(), s.rhs(lam, mu)), rtol=1e-9)


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_inverse_entries_identity(beta):
    for L in (1, 2, 10, 100):
        for i in range(1, L + 1):
            a1, aL = inverse_column_entries(L, beta, i)
            assert beta * a1 + (1 - beta) * aL == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.8])
def test_inverse_entries_reconstruct_theta_and_dense_inverse(beta):
    L = 12
    np.testing.assert_allclose(theta_from_inverse(L, beta, 2.0, 0.5),
                               theta_closed_form(L, beta, 2.0, 0.5).values, rtol=1e-12)
    inv = np.linalg.inv(TridiagonalSystem(L, beta).dense())
    for i in range(1, L + 1):
        a1, aL = inverse_column_entries(L, beta, i)
        assert a1 == pytest.approx(inv[i - 1, 0], rel=1e-10)
        assert aL == pytest.approx(inv[i - 1, L - 1], rel=1e-10)


def test_last_diagonal_inverse_entry_at_half():
    for L in (2, 5, 30):
        _, aLL = inverse_column_entries(L, 0.5, L)
        d = determinant_recursion
        assert aLL == pytest.approx(d(L - 1, 0.5) / d(L, 0.5), rel=1e-12)
        assert aLL == pytest.approx(2 * L / (L + 1), rel=1e-12)


def test_diagnostic_csv():
    lines = diagnostic_csv(4, 0.3, 1.0, 2.0).splitlines()
    assert lines[0] == "i,theta,w,a_i1,a_iL" and len(lines) == 5


def _margin_mp(L, i, beta, lam, schedule):
    """Direct high-precision difference of the unstabilised closed forms."""
    mpmath.mp.dps = 400
    b = mpmath.mpf(beta)

    def theta(LL, mu):
        if beta == 0.5:
            w = mpmath.mpf(LL - i + 1) / (LL + 1)
        else:
            w = (b ** i * (1 - b) ** (LL - i + 1) - b ** (LL + 1)) / (
                (1 - b) ** (LL + 1) - b ** (LL + 1))
        return w * lam + (1 - w) * mpmath.mpf(mu)

    return theta(L, schedule(L)) - theta(L - 1, schedule(L - 1))


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("L", [3, 10, 60, 300])
def test_margin_matches_high_precision_difference(beta, L):
    sched = MuSchedule.inverse_square()
    for i in (1, L // 2, L - 1):
        ref = _margin_mp(L, i, beta, 1.0, sched)
        got = monotonicity_margin(L, i, beta, 1.0, sched)
        assert got == pytest.approx(float(ref), rel=1e-9, abs=1e-300)


def test_margin_half_formula():
    sched = MuSchedule.inverse_square()
    L, i = 7, 3
    mu, mu_prev = sched(L), sched(L - 1)
    expected = (i * (1 - mu_prev) + i * L * (mu - mu_prev)) / (L * (L + 1))
    assert monotonicity_margin(L, i, 0.5, 1.0, sched) == pytest.approx(expected, rel=1e-12)


def test_margin_sign_does_not_depend_on_index():
    sched = MuSchedule.inverse_square()
    for beta in (0.3, 0.5, 0.7):
        for L in (2, 5, 40):
            signs = {np.sign(monotonicity_margin(L, i, beta, 1.0, sched)) for i in range(1, L)}
            assert len(signs) == 1


def test_scan_at_and_above_half():
    for beta in (0.5, 0.7):
        scan = monotonicity_scan(beta, 1.0, MuSchedule.inverse_square(), 500)
        assert scan.L0 == 3
        assert np.all(scan.min_margin[scan.L0 - 2:] >= 0)


def test_scan_below_half_stays_negative():
    # the exponentially small lam-term cannot offset a polynomially decreasing schedule
    scan = monotonicity_scan(0.3, 1.0, MuSchedule.inverse_square(), 500)
    assert scan.L0 is None and scan.negative_L[-1] == 500


def test_constant_schedule_above_lam_warns_and_goes_negative():
    with pytest.warns(UserWarning):
        scan = monotonicity_scan(0.6, 1.0, MuSchedule.constant(3.0), 50)
    assert scan.L0 is None
