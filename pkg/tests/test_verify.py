import json
import math

import numpy as np
import pytest
from scipy import stats

from bdpu.errors import InsufficientSample, ParameterError, RegimeError
from bdpu.partition import AllelicPartition, ChainParams, MuSchedule
from bdpu.stationary import LimitLaw, theta_closed_form
from bdpu.verify import (
    BalanceReport,
    FitReport,
    check_detailed_balance_norm,
    check_detailed_balance_pi,
    check_embedding,
    check_global_balance_pi_L,
    check_particle_equivalence,
    check_subcritical_stationarity,
    chi_square,
    embedding_csv,
    exact_params,
    maximal_class_probs,
    phase_scan,
    predecessors,
    random_states,
    reports_json,
    tv_distance,
)


def test_tv_edge_cases():
    assert tv_distance({0: 0.5, 1: 0.5}, {0: 0.5, 1: 0.5}) == 0
    assert tv_distance({0: 1.0}, {1: 1.0}) == 1
    assert tv_distance([0.2, 0.8], [0.8, 0.2]) == pytest.approx(0.6)
    # truncated target: the missing mass counts against it
    assert tv_distance({0: 1.0}, {0: 0.9}) == pytest.approx(0.1)


def test_chi_square_merges_small_cells():
    obs = {0: 40, 1: 35, 2: 20, 3: 4, 4: 1}
    target = {0: 0.4, 1: 0.35, 2: 0.2, 3: 0.04, 4: 0.01}
    stat, dof, p = chi_square(obs, target)
    assert dof == 3 and stat == pytest.approx(0.0, abs=1e-12) and p == pytest.approx(1.0)
    with pytest.raises(InsufficientSample):
        chi_square({0: 3}, {0: 1.0})


def test_chi_square_p_values_are_roughly_uniform():
    rng = np.random.default_rng(0)
    pmf = stats.poisson.pmf(np.arange(30), 1.0)
    ps = []
    for _ in range(200):
        x = rng.poisson(1.0, 10000)
        counts = {k: float(c) for k, c in enumerate(np.bincount(x))}
        ps.append(chi_square(counts, dict(enumerate(pmf)))[2])
    assert stats.kstest(ps, "uniform").pvalue > 1e-3


def test_origin_edge_balances():
    law = LimitLaw(0.3, 1.0)
    r = check_detailed_balance_pi(law, ChainParams(0.3, 1.0), [AllelicPartition({1: 1})])
    assert r.passed and r.edges == 3


def test_origin_only_state_set_warns():
    with pytest.warns(UserWarning):
        r = check_detailed_balance_pi(LimitLaw(0.3, 1.0), ChainParams(0.3, 1.0),
                                      [AllelicPartition()])
    assert r.passed


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.49])
def test_detailed_balance_and_negative_control(beta):
    rng = np.random.default_rng(1)
    states = random_states(rng, 300, 20)
    law, p = LimitLaw(beta, 1.0), ChainParams(beta, 1.0)
    assert check_detailed_balance_pi(law, p, states).passed
    assert not check_detailed_balance_pi(law, p, states, perturb=0.01).passed
    assert check_detailed_balance_norm(law).passed
    assert not check_detailed_balance_norm(law, perturb=0.01).passed


def test_detailed_balance_requires_subcritical():
    with pytest.raises(RegimeError):
        check_detailed_balance_pi(LimitLaw(0.5, 1.0), ChainParams(0.5, 1.0), [])


def test_predecessors_of_origin():
    preds = {m for m, _ in predecessors(AllelicPartition(), 2)}
    assert preds == {AllelicPartition({1: 1}), AllelicPartition({2: 1})}


@pytest.mark.parametrize("L", [1, 2, 4, 6])
def test_global_balance_and_negative_control(L):
    rng = np.random.default_rng(L)
    p = ChainParams(0.35, 1.2, L, 2.5)
    th = theta_closed_form(L, 0.35, 1.2, 2.5)
    states = random_states(rng, 300, 20, L)
    assert check_global_balance_pi_L(th, p, states).passed
    assert not check_global_balance_pi_L(th.perturbed(0.01), p, states).passed


def test_particle_equivalence_exact():
    r = check_particle_equivalence(exact_params(0.3, 1.0), np.random.default_rng(2), count=200)
    assert r.passed and r.max_violation == 0


def test_class_probabilities_sum_to_one():
    states = np.array([[0, 0], [3, 1], [1, 5]])
    probs = maximal_class_probs(states, 0.3, 1.0, 0.25)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_embedding_moderate_beta():
    r = check_embedding(2, ChainParams(0.4, 1.0), MuSchedule.inverse_square(), 1_000_000, seed=21)
    assert r.passed, r.details
    obs = [row["observed"] for row in r.details["classes"]]
    assert sum(obs) == r.sample_size
    for row in r.details["classes"]:
        assert abs(row["observed"] - row["expected"]) <= 4 * math.sqrt(row["variance"])
    assert embedding_csv(r).startswith("class,observed,expected")
    assert min(r.details["sigma_fraction_halves"]) > 0


def test_embedding_detects_wrong_boundary_weight():
    # comparing the chain run with mu_L against the kernel at 2*mu_L must fail
    from bdpu.engine import StoppingTimes, simulate

    obs = StoppingTimes()
    simulate(ChainParams(0.3, 1.0), "modified", 500_000, [obs], seed=3, L=2, mu_L=0.25)
    probs = maximal_class_probs(obs.states, 0.3, 1.0, 0.5)
    E = probs[:, -1].sum()
    V = (probs[:, -1] * (1 - probs[:, -1])).sum()
    O = np.count_nonzero(obs.classes == 5)
    assert abs(O - E) / math.sqrt(V) > 10


def test_stationarity_small_run():
    r = check_subcritical_stationarity(ChainParams(0.3, 1.0), 2_000_000, seed=4)
    assert r.tv < 0.02 and r.details["tv_block_count"] < 0.02
    with pytest.raises(RegimeError):
        check_subcritical_stationarity(ChainParams(0.6, 1.0), 10)


def test_phase_scan_shape_and_empty_grid():
    rows = phase_scan([0.2, 0.8], 1.0, 5000, 20, seed=5)
    assert [r.beta for r in rows] == [0.2, 0.8]
    assert rows[1].growth_slope > rows[0].growth_slope
    with pytest.raises(ParameterError):
        phase_scan([], 1.0, 10, 2)


def test_reports_serialise():
    reps = [BalanceReport("x", 1, 2, 0.0, 1e-13), FitReport("y", 10, tv=0.1, passed=True)]
    obj = json.loads(reports_json(reps))
    assert obj[0]["passed"] and obj[1]["tv"] == 0.1
    assert reps[0].text().startswith("PASS")
