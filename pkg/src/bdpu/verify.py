"""Executable checks of the invariant laws, the embedding and the limit regimes.

Algebraic identities are compared in relative terms at double precision;
statistical checks use significance 0.001, Bonferroni-adjusted when several
transition classes are tested together.
"""
from __future__ import annotations

import io
import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .engine import Occupation, StoppingTimes, run_replicas, simulate
from .errors import InsufficientSample, ParameterError, RegimeError
from .kernels import (
    bdpu_transitions,
    induced_partition,
    maximal_count_transitions,
    pushforward_partition_kernel,
)
from .partition import (
    AllelicPartition,
    ChainParams,
    MuSchedule,
    apply_move,
    boundary_insert,
    boundary_remove,
    grow,
    new_singleton,
    partitions_of,
    shrink,
)
from .stationary import (
    LimitLaw,
    ThetaVector,
    expected_size_mass,
    k_mean,
    k_pmf,
    log_esf,
    log_pi,
    log_pi_L,
    log_tilted_nb_pmf,
    tilted_nb_pmf,
)

ALPHA = 1e-3


# Reports --------------------------------------------------------------------


@dataclass
class BalanceReport:
    name: str
    states: int
    edges: int
    max_detailed: float = 0.0
    max_global: float = 0.0
    tol: float = 1e-12

    @property
    def max_violation(self) -> float:
        return max(self.max_detailed, self.max_global)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}

    def text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {self.name}: states={self.states} edges={self.edges} "
                f"max_violation={self.max_violation:.3e} tol={self.tol:.0e}")


@dataclass
class FitReport:
    name: str
    sample_size: int
    tv: float | None = None
    chi2: float | None = None
    dof: int | None = None
    p_value: float | None = None
    truncation_mass: float = 0.0
    passed: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        parts = [f"{verdict} {self.name}: n={self.sample_size}"]
        if self.tv is not None:
            parts.append(f"tv={self.tv:.4g}")
        if self.chi2 is not None:
            parts.append(f"chi2={self.chi2:.4g} dof={self.dof} p={self.p_value:.4g}")
        return " ".join(parts)


def reports_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, default=float)


# Distribution comparisons -----------------------------------------------------


def _as_mass(d) -> dict:
    if isinstance(d, dict):
        return d
    return dict(enumerate(np.asarray(d, dtype=float)))


def tv_distance(empirical, target, support=None) -> float:
    """Total variation between two laws given as dicts or arrays.

    Mass outside ``support`` (default: union of keys) is lumped into one
    extra cell on each side, so truncated targets are handled honestly.
    """
    e, t = _as_mass(empirical), _as_mass(target)
    keys = set(e) | set(t) if support is None else set(support)
    ie = sum(float(e.get(k, 0)) for k in keys)
    it = sum(float(t.get(k, 0)) for k in keys)
    diff = sum(abs(float(e.get(k, 0)) - float(t.get(k, 0))) for k in keys)
    return 0.5 * (diff + abs((1 - ie) - (1 - it)))


def chi_square(observed, target, support=None, min_expected: float = 5.0,
               sample_size: float | None = None) -> tuple[float, int, float]:
    """Pearson chi-square of counts against probabilities.

    Cells with expected count below ``min_expected`` are pooled, smallest
    first; the target mass outside ``support`` forms its own cell.  With
    ``sample_size`` given, counts are rescaled to that effective size.
    """
    o, t = _as_mass(observed), _as_mass(target)
    keys = list(dict.fromkeys(list(o) + list(t) if support is None else support))
    N = float(sum(o.values()))
    if N <= 0:
        raise InsufficientSample("no observations")
    scale = 1.0 if sample_size is None else sample_size / N
    cells = [(N * float(t.get(k, 0)), float(o.get(k, 0))) for k in keys]
    rest_t = 1.0 - sum(float(t.get(k, 0)) for k in keys)
    rest_o = N - sum(c for _, c in cells)
    if rest_t * N > 1e-9 or rest_o > 0:
        cells.append((max(rest_t, 0.0) * N, rest_o))
    cells = [(e * scale, c * scale) for e, c in cells]
    cells.sort()
    merged = []
    pool_e = pool_o = 0.0
    for e, c in cells:
        pool_e += e
        pool_o += c
        if pool_e >= min_expected:
            merged.append((pool_e, pool_o))
            pool_e = pool_o = 0.0
    if pool_e > 0 or pool_o > 0:
        if merged:
            e, c = merged.pop()
            merged.append((e + pool_e, c + pool_o))
        else:
            merged.append((pool_e, pool_o))
    if len(merged) < 2:
        raise InsufficientSample(f"only {len(merged)} cell(s) after merging")
    stat = sum((c - e) ** 2 / e for e, c in merged if e > 0)
    dof = len(merged) - 1
    return float(stat), dof, float(stats.chi2.sf(stat, dof))


# Random states -----------------------------------------------------------------


def random_partition(rng: np.random.Generator, max_norm: int,
                     L: int | None = None) -> AllelicPartition:
    """A random partition with norm uniform on ``0..max_norm`` (sizes <= L)."""
    left = int(rng.integers(0, max_norm + 1))
    counts: Counter = Counter()
    while left > 0:
        top = left if L is None else min(left, L)
        size = int(rng.integers(1, top + 1))
        counts[size] += 1
        left -= size
    return AllelicPartition(counts)


def random_states(rng: np.random.Generator, count: int, max_norm: int,
                  L: int | None = None) -> list[AllelicPartition]:
    return [random_partition(rng, max_norm, L) for _ in range(count)]


def _warn_if_trivial(states) -> None:
    if all(m.norm == 0 for m in states):
        warnings.warn("only the empty partition was supplied; the check is vacuous",
                      stacklevel=3)


# Balance checks ----------------------------------------------------------------


def _rel(a_log: float, b_log: float) -> float:
    if a_log == b_log:
        return 0.0
    return abs(math.expm1(a_log - b_log))


def check_detailed_balance_pi(law: LimitLaw, params: ChainParams, states,
                              tol: float = 1e-12, perturb: float = 0.0) -> BalanceReport:
    """Check ``pi(m) p(m'|m) = pi(m') p(m|m')`` on every edge out of ``states``.

    ``perturb`` scales the law's ``lam`` by ``1 + perturb`` while the kernel
    keeps the true value, as a negative control.
    """
    law.require_subcritical()
    states = list(states)
    _warn_if_trivial(states)
    target = LimitLaw(law.beta, law.lam * (1 + perturb)) if perturb else law
    worst, edges = 0.0, 0
    for m in states:
        lp_m = log_pi(m, target)
        for mv, prob in bdpu_transitions(m, params):
            m2 = apply_move(m, mv)
            back = bdpu_transitions(m2, params).prob(mv.inverse())
            lhs = lp_m + math.log(prob)
            rhs = log_pi(m2, target) + math.log(back)
            worst = max(worst, _rel(lhs, rhs))
            edges += 1
    return BalanceReport("detailed balance of pi", len(states), edges,
                         max_detailed=worst, tol=tol)


def check_detailed_balance_norm(law: LimitLaw, n_max: int = 50, tol: float = 1e-12,
                                perturb: float = 0.0) -> BalanceReport:
    """Detailed balance of the birth-and-death chain of the total size."""
    law.require_subcritical()
    target = LimitLaw(law.beta, law.lam * (1 + perturb)) if perturb else law
    b, lam = law.beta, law.lam
    worst = 0.0
    for n in range(1, n_max + 1):
        up = log_tilted_nb_pmf(n - 1, target) + math.log(b * (lam + n - 1) / (b * lam + n - 1))
        down = log_tilted_nb_pmf(n, target) + math.log((1 - b) * n / (b * lam + n))
        worst = max(worst, _rel(up, down))
    return BalanceReport("detailed balance of the total size", n_max + 1, n_max,
                         max_detailed=worst, tol=tol)


def _predecessor_moves(L: int):
    yield new_singleton()
    for i in range(1, L):
        yield grow(i)
    yield boundary_remove(L)
    for i in range(1, L + 1):
        yield shrink(i)
    yield boundary_insert(L)


def predecessors(m_prime: AllelicPartition, L: int):
    """``(m, move)`` pairs with ``apply_move(m, move) == m_prime``."""
    for mv in _predecessor_moves(L):
        counts = dict(m_prime.counts)
        ok = True
        for size, d in mv.delta():
            c = counts.get(size, 0) - d
            if c < 0:
                ok = False
                break
            counts[size] = c
        if ok:
            m = AllelicPartition(counts)
            if m.max_size <= L and apply_move(m, mv) == m_prime:
                yield m, mv


def check_global_balance_pi_L(theta: ThetaVector, params: ChainParams, states,
                              tol: float = 1e-11) -> BalanceReport:
    """Check ``sum_m pi_L(m) p_L(m'|m) = pi_L(m')`` for each ``m'`` in ``states``.

    ``theta`` may differ from the exact solution (negative control); the
    kernel always uses ``params``.
    """
    L = params.L
    states = list(states)
    _warn_if_trivial(states)
    worst, edges = 0.0, 0
    for m2 in states:
        base = log_pi_L(m2, theta)
        flux = []
        for m, mv in predecessors(m2, L):
            prob = maximal_count_transitions(m, params).prob(mv)
            if prob:
                flux.append(math.exp(log_pi_L(m, theta) - base) * prob)
                edges += 1
        worst = max(worst, abs(math.fsum(flux) - 1.0))
    return BalanceReport("global balance of pi_L", len(states), edges,
                         max_global=worst, tol=tol)


def check_particle_equivalence(params: ChainParams, rng: np.random.Generator,
                               count: int = 1000, max_len: int = 12,
                               alphabet: int = 6) -> BalanceReport:
    """Compare the pushed-forward particle kernel with the urn kernel.

    With ``Fraction`` parameters the comparison is exact; a mismatch counts
    as violation 1.
    """
    bad, edges = 0, 0
    for _ in range(count):
        N = int(rng.integers(0, max_len + 1))
        x = tuple(int(v) for v in rng.integers(0, alphabet, size=N))
        pushed = pushforward_partition_kernel(x, params)
        direct = bdpu_transitions(induced_partition(x), params).as_dict()
        edges += len(direct)
        if pushed != direct:
            bad += 1
    return BalanceReport("particle push-forward equals urn kernel", count, edges,
                         max_detailed=float(bad), tol=0.0)


# Embedding ----------------------------------------------------------------------


def class_labels(L: int) -> list[str]:
    labels = ["new"] + [f"grow_{i}" for i in range(1, L)] + [f"exit_{L}"]
    labels += [f"shrink_{i}" for i in range(1, L + 1)] + [f"enter_{L}"]
    return labels


def maximal_class_probs(states: np.ndarray, beta: float, lam: float,
                        mu: float) -> np.ndarray:
    """Maximal-count kernel probabilities of every class, one row per state."""
    L = states.shape[1]
    sizes = np.arange(1, L + 1)
    mass = states * sizes
    total = beta * lam + (1 - beta) * mu + mass.sum(axis=1)
    w = np.empty((len(states), 2 * L + 2))
    w[:, 0] = beta * lam
    w[:, 1: L + 1] = beta * mass
    w[:, L + 1: 2 * L + 1] = (1 - beta) * mass
    w[:, 2 * L + 1] = (1 - beta) * mu
    return w / total[:, None]


def check_embedding(L: int, params: ChainParams, schedule: MuSchedule | float,
                    steps: int, rng: np.random.Generator | None = None,
                    seed: int | None = None) -> FitReport:
    """Compare the modified chain, observed at the times its first ``L`` counts
    change, with the maximal-count kernel at ``mu = mu_L``.

    Each class gets an exact-variance z-test: given the recorded pre-move
    states, the class indicator at each event is Bernoulli with known
    probability, so ``(O - E)^2 / V`` is approximately chi-square(1).
    """
    mu_L = schedule if isinstance(schedule, (int, float)) else schedule(L)
    obs = StoppingTimes()
    simulate(params, "modified", steps, [obs], rng=rng, seed=seed, L=L, mu_L=mu_L)
    times, classes, states = obs.times, obs.classes, obs.states
    n_events = len(classes)
    labels = class_labels(L)
    report = FitReport(f"embedding L={L} beta={params.beta}", n_events)
    if n_events == 0:
        report.details = {"sigma_fraction": 0.0}
        return report
    probs = maximal_class_probs(states, params.beta, params.lam, mu_L)
    O = np.bincount(classes, minlength=2 * L + 2).astype(float)
    E = probs.sum(axis=0)
    V = (probs * (1 - probs)).sum(axis=0)
    rows = []
    pvals = []
    for c, lab in enumerate(labels):
        if V[c] > 0:
            z2 = (O[c] - E[c]) ** 2 / V[c]
            pv = float(stats.chi2.sf(z2, 1))
            pvals.append(pv)
        else:
            z2, pv = float("nan"), float("nan")
        rows.append({"class": lab, "observed": int(O[c]), "expected": float(E[c]),
                     "variance": float(V[c]), "chi2": float(z2), "p_value": pv})
    tested = len(pvals)
    adjusted = min(1.0, min(pvals) * tested) if tested else 1.0
    keep = E > 0
    overall = float(((O[keep] - E[keep]) ** 2 / E[keep]).sum())
    half = steps // 2
    early = int(np.count_nonzero(times < half))
    report.chi2 = overall
    report.dof = int(keep.sum()) - 1
    report.p_value = float(stats.chi2.sf(overall, report.dof)) if report.dof > 0 else 1.0
    report.passed = adjusted > ALPHA
    report.details = {
        "classes": rows,
        "min_adjusted_p": adjusted,
        "sigma_fraction": n_events / steps,
        "sigma_fraction_halves": [early / max(half, 1), (n_events - early) / max(steps - half, 1)],
        "mu_L": mu_L,
    }
    return report


def embedding_csv(report: FitReport) -> str:
    buf = io.StringIO()
    cols = ["class", "observed", "expected", "variance", "chi2", "p_value"]
    wr = csv.DictWriter(buf, cols, lineterminator="\n")
    wr.writeheader()
    for row in report.details.get("classes", []):
        wr.writerow(row)
    return buf.getvalue()


# Long-run behaviour --------------------------------------------------------------


def _norm_support(law: LimitLaw, tail: float = 1e-12) -> int:
    n, acc = 0, 0.0
    while acc < 1 - tail:
        acc += tilted_nb_pmf(n, law)
        n += 1
    return n


def check_subcritical_stationarity(params: ChainParams, steps: int,
                                   rng: np.random.Generator | None = None,
                                   seed: int | None = None, burn_in: int | None = None,
                                   tv_tol: float = 0.01) -> FitReport:
    """Long-run occupation of the urn chain versus the stationary law.

    Passes when both the total-size law and the block-count law are within
    ``tv_tol`` in total variation.  Chi-square statistics use an effective
    sample size from batch means, since successive states are correlated.
    """
    law = LimitLaw(params.beta, params.lam)
    if not law.subcritical:
        raise RegimeError(f"beta={params.beta} >= 1/2 has no stationary law")
    burn_in = steps // 10 if burn_in is None else burn_in
    occ = Occupation(burn_in=burn_in, sizes=5)
    simulate(params, "bdpu", steps, [occ], rng=rng, seed=seed)
    N = occ.samples
    n_hi = max(_norm_support(law), len(occ.norm_hist))
    norm_target = {n: tilted_nb_pmf(n, law) for n in range(n_hi)}
    norm_emp = {n: c / N for n, c in enumerate(occ.norm_hist) if c}
    tv_norm = tv_distance(norm_emp, norm_target)
    k_hi = max(len(occ.block_hist), 40)
    k_target = dict(enumerate(k_pmf(np.arange(k_hi), law)))
    k_emp = {k: c / N for k, c in enumerate(occ.block_hist) if c}
    tv_k = tv_distance(k_emp, k_target)

    mean_k, se_k = occ.mean_with_se("blocks")
    mean_n, se_n = occ.mean_with_se("norm")
    var_n = float(np.dot((np.arange(len(occ.norm_hist)) - mean_n) ** 2, occ.norm_hist) / N)
    n_eff = var_n / se_n ** 2 if se_n > 0 else float(N)
    counts = {n: float(c) for n, c in enumerate(occ.norm_hist) if c}
    chi2, dof, pv = chi_square(counts, norm_target, sample_size=n_eff)

    z = stats.norm.isf(ALPHA / 2)
    target_k = k_mean(law)
    mass = np.asarray(occ.mass_sums) / N
    mass_target = np.array([expected_size_mass(i, law) for i in range(1, 6)])
    report = FitReport(f"stationarity beta={params.beta} lam={params.lam}", N,
                       tv=tv_norm, chi2=chi2, dof=dof, p_value=pv,
                       truncation_mass=1 - sum(norm_target.values()))
    report.passed = tv_norm < tv_tol and tv_k < tv_tol
    report.details = {
        "tv_block_count": tv_k,
        "mean_block_count": mean_k,
        "mean_block_count_se": se_k,
        "k_mean": target_k,
        "k_mean_within_ci": abs(mean_k - target_k) <= z * se_k,
        "effective_sample_size": n_eff,
        "size_mass": mass.tolist(),
        "size_mass_target": mass_target.tolist(),
        "size_mass_ratio": (mass / mass_target).tolist(),
    }
    return report


def growth_slope(checkpoints: np.ndarray, mean_blocks: np.ndarray) -> float:
    """Least-squares slope of mean block count against ``log h``."""
    x = np.log(np.asarray(checkpoints, dtype=float))
    return float(np.polyfit(x, mean_blocks, 1)[0])


def geometric_checkpoints(horizon: int, count: int = 12, start: int = 100) -> list[int]:
    start = min(start, horizon)
    return sorted({int(round(v)) for v in np.geomspace(start, horizon, count)})


def check_supercritical_limit(params: ChainParams, horizon: int, replicas: int,
                              seed: int | None = None, tv_tol: float = 0.05,
                              sizes: int = 5) -> FitReport:
    """Final ``m_1..m_5`` across replicas versus independent ``Po(lam / i)``."""
    if params.beta < 0.5:
        raise RegimeError("the Poisson limit holds for beta >= 1/2")
    cps = geometric_checkpoints(horizon)
    res = run_replicas(params, horizon, replicas, seed=seed, sizes=sizes, checkpoints=cps)
    tvs = []
    for i in range(1, sizes + 1):
        col = res.sizes[:, i - 1]
        emp = {k: c / replicas for k, c in enumerate(np.bincount(col)) if c}
        top = max(len(emp) and max(emp), 0) + 30
        target = dict(enumerate(stats.poisson.pmf(np.arange(top), params.lam / i)))
        tvs.append(tv_distance(emp, target))
    m1 = res.sizes[:, 0]
    counts1 = {k: float(c) for k, c in enumerate(np.bincount(m1)) if c}
    target1 = dict(enumerate(stats.poisson.pmf(np.arange(len(counts1) + 60), params.lam)))
    chi2, dof, pv = chi_square(counts1, target1)
    corr = float(np.corrcoef(res.sizes[:, 0], res.sizes[:, 1])[0, 1]) if sizes > 1 else 0.0
    mean_blocks = res.blocks_at.mean(axis=0)
    slope = growth_slope(res.checkpoints, mean_blocks)
    half = len(cps) // 2
    report = FitReport(f"supercritical beta={params.beta} h={horizon}", replicas,
                       tv=tvs[0], chi2=chi2, dof=dof, p_value=pv)
    report.passed = tvs[0] < tv_tol
    report.details = {
        "tv_sizes": tvs,
        "corr_m1_m2": corr,
        "corr_bound": float(stats.norm.isf(ALPHA / 2) / math.sqrt(replicas)),
        "growth_slope": slope,
        "growth_slope_halves": [growth_slope(res.checkpoints[:half], mean_blocks[:half]),
                                growth_slope(res.checkpoints[half:], mean_blocks[half:])],
        "mean_block_count": float(res.blocks.mean()),
    }
    return report


def check_finite_sample_esf(lam: float, n: int, replicas: int,
                            seed: int | None = None) -> FitReport:
    """With ``beta = 1`` the chain is a plain urn: after ``n`` steps the
    partition has the Ewens law of size ``n`` exactly."""
    params = ChainParams(1.0, lam)
    res = run_replicas(params, n, replicas, seed=seed, sizes=n)
    seen = Counter(AllelicPartition.from_dense(row) for row in res.sizes)
    target = {m: math.exp(log_esf(n, m, lam)) for m in partitions_of(n)}
    chi2, dof, pv = chi_square({m: float(c) for m, c in seen.items()}, target)
    report = FitReport(f"urn partition of n={n} vs Ewens law", replicas,
                       tv=tv_distance({m: c / replicas for m, c in seen.items()}, target),
                       chi2=chi2, dof=dof, p_value=pv)
    report.passed = pv > ALPHA and set(seen) <= set(target)
    return report


@dataclass
class PhaseRow:
    beta: float
    mean_block_count: float
    block_count_se: float
    growth_slope: float
    stationarity: float  # (mean K - E[K]) / se below 1/2, else nan

    def as_list(self) -> list:
        return [self.beta, self.mean_block_count, self.block_count_se,
                self.growth_slope, self.stationarity]


def phase_scan(betas, lam: float, horizon: int, replicas: int,
               seed: int | None = None) -> list[PhaseRow]:
    """Mean block count at ``horizon`` and its growth rate in ``log h``, per beta."""
    betas = list(betas)
    if not betas:
        raise ParameterError("the beta grid is empty")
    seeds = np.random.SeedSequence(seed).spawn(len(betas))
    rows = []
    cps = geometric_checkpoints(horizon, start=max(10, horizon // 1000))
    for b, ss in zip(betas, seeds):
        params = ChainParams(float(b), lam)
        res = run_replicas(params, horizon, replicas,
                           seed=int(ss.generate_state(1)[0]), sizes=1, checkpoints=cps)
        mean = float(res.blocks.mean())
        se = float(res.blocks.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("nan")
        slope = growth_slope(res.checkpoints, res.blocks_at.mean(axis=0))
        diag = float("nan")
        if b < 0.5 and se > 0:
            diag = (mean - k_mean(LimitLaw(float(b), lam))) / se
        rows.append(PhaseRow(float(b), mean, se, slope, diag))
    return rows


def exact_params(beta, lam) -> ChainParams:
    """Rational parameters, so kernel probabilities compare exactly."""
    return ChainParams(Fraction(beta).limit_denominator(10**6),
                       Fraction(lam).limit_denominator(10**6))
