"""Closed-form stationary and limit laws, evaluated in log space.

Notation: ``p = beta / (1 - beta)`` and, for the maximal-count chain, the
component weights ``theta_i = w_i * lam + (1 - w_i) * mu``.  Below the
critical value ``beta = 1/2`` the urn chain has the stationary law

    pi(m) = (beta*lam + n) / C * prod_i Po(m_i; theta_i / i),
    theta_i = lam * p**i,  C = beta*lam + beta*lam / (1 - 2*beta),

which is also a mixture over ``n`` of Ewens sampling formulas with a tilted
Negative Binomial weight on ``n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RegimeError, StateExceedsCapacity
from .partition import AllelicPartition, partitions_of

HALF_TOL = 1e-9


def _one_minus_pow(x: float, k: float) -> float:
    """``1 - x**k`` for ``0 <= x < 1`` without cancellation."""
    if x == 0.0:
        return 1.0
    return -math.expm1(k * math.log(x))


def _one_minus_pow_arr(x: float, k: np.ndarray) -> np.ndarray:
    if x == 0.0:
        return np.ones_like(k, dtype=float)
    return -np.expm1(k * math.log(x))


def is_half(beta: float) -> bool:
    return abs(1.0 - 2.0 * float(beta)) < HALF_TOL


def mixing_weights(L: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``w_i`` of ``lam`` and their complements ``1 - w_i``, i = 1..L.

    Both are computed directly (not as ``1 - w``) in ratio form so that
    neither large ``L`` nor ``beta`` close to 1/2 loses precision.
    """
    if not 0 < beta < 1:
        raise ParameterError(f"mixing weights need beta in (0,1), got {beta}")
    i = np.arange(1, L + 1, dtype=float)
    if is_half(beta):
        return (L - i + 1) / (L + 1), i / (L + 1)
    if beta < 0.5:
        p = beta / (1 - beta)
        den = _one_minus_pow(p, L + 1)
        w = np.exp(i * math.log(p)) * _one_minus_pow_arr(p, L - i + 1) / den
        c = _one_minus_pow_arr(p, i) / den
    else:
        q = (1 - beta) / beta
        den = _one_minus_pow(q, L + 1)
        w = _one_minus_pow_arr(q, L - i + 1) / den
        c = np.exp((L - i + 1) * math.log(q)) * _one_minus_pow_arr(q, i) / den
    return w, c


@dataclass(frozen=True)
class ThetaVector:
    """Component parameters of the maximal-count chain's invariant law."""

    L: int
    beta: float
    lam: float
    mu: float
    values: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        i = np.arange(1, self.L + 1)
        with np.errstate(divide="ignore"):  # a zero rate forbids that size
            object.__setattr__(self, "_log_rate", np.log(self.values / i))
        object.__setattr__(self, "_rate_sum", float(np.sum(self.values / i)))
        object.__setattr__(self, "_sum", float(np.sum(self.values)))

    def __getitem__(self, i: int) -> float:
        return float(self.values[i - 1])

    @property
    def eta(self) -> float:
        return self.beta * self.lam + (1 - self.beta) * self.mu

    def perturbed(self, rel: float) -> "ThetaVector":
        return ThetaVector(self.L, self.beta, self.lam, self.mu,
                           self.values * (1 + rel), self.weights)

    def to_rows(self):
        for k in range(self.L):
            yield k + 1, float(self.values[k]), float(self.weights[k])


def theta_closed_form(L: int, beta: float, lam: float, mu: float) -> ThetaVector:
    """Closed-form ``theta_1..theta_L`` of the maximal-count chain."""
    if L < 1 or not lam > 0 or not mu >= 0:
        raise ParameterError("need L >= 1, lam > 0 and mu >= 0")
    w, c = mixing_weights(L, beta)
    return ThetaVector(L, beta, lam, mu, w * lam + c * mu, w)


def theta_sum(L: int, beta: float, lam: float, mu: float) -> float:
    """``sum_i theta_i`` from its closed form (no summation)."""
    if not 0 < beta < 1:
        raise ParameterError(f"beta must lie in (0,1), got {beta}")
    if is_half(beta):
        return (lam + mu) * L / 2
    if beta < 0.5:
        p = beta / (1 - beta)
        den = _one_minus_pow(p, L + 1)
        head = (mu - math.exp((L + 1) * math.log(p)) * lam) / den * L
        tail = beta / (1 - 2 * beta) * _one_minus_pow(p, L) / den
    else:
        q = (1 - beta) / beta
        den = _one_minus_pow(q, L + 1)
        head = (lam - math.exp((L + 1) * math.log(q)) * mu) / den * L
        tail = (1 - beta) / (1 - 2 * beta) * _one_minus_pow(q, L) / den
    return head + tail * (lam - mu)


def median_weight(L: int, beta: float) -> float:
    """``w_(L+1)/2`` for odd ``L``: ``b^k / (b^k + (1-b)^k)``, k = (L+1)/2."""
    if L % 2 == 0:
        raise ValueError("the median index exists for odd L only")
    k = (L + 1) // 2
    return 1.0 / (1.0 + ((1 - beta) / beta) ** k)


def _log_poisson_product(m: AllelicPartition, log_rate, L: int | None = None) -> float:
    out = 0.0
    for i, c in m:
        if L is not None and i > L:
            raise StateExceedsCapacity(f"{m!r} has blocks larger than L={L}")
        out += c * log_rate(i) - math.lgamma(c + 1)
    return out


def log_pi_L(m: AllelicPartition, theta: ThetaVector) -> float:
    """Log invariant probability of ``m`` for the maximal-count chain."""
    lr = theta._log_rate
    prod = _log_poisson_product(m, lambda i: lr[i - 1], theta.L)
    eta = theta.eta
    return (math.log(eta + m.norm) - math.log(eta + theta._sum)
            + prod - theta._rate_sum)


def pi_L(m: AllelicPartition, theta: ThetaVector) -> float:
    return math.exp(log_pi_L(m, theta))


def sample_pi_L(theta: ThetaVector, rng: np.random.Generator, size: int) -> np.ndarray:
    """Exact draws from the maximal-count invariant law, shape ``(size, L)``.

    Independent ``Po(theta_i / i)`` counts plus one extra block at a size
    ``J`` drawn with weight ``theta_j`` (``J = 0``, no extra block, has
    weight ``eta``).
    """
    L = theta.L
    rates = theta.values / np.arange(1, L + 1)
    counts = rng.poisson(rates, size=(size, L))
    weights = np.concatenate([[theta.eta], theta.values])
    J = rng.choice(L + 1, size=size, p=weights / weights.sum())
    hit = J > 0
    counts[np.nonzero(hit)[0], J[hit] - 1] += 1
    return counts


@dataclass(frozen=True)
class LimitLaw:
    """Long-run law of the urn chain for given ``beta`` and ``lam``.

    Below 1/2 (``subcritical``) it is the stationary law ``pi`` with
    ``theta_i = lam * p**i``; from 1/2 up the counts are asymptotically
    independent ``Po(lam / i)`` and there is no stationary law.
    """

    beta: float
    lam: float

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ParameterError(f"beta must lie in (0,1], got {self.beta}")
        if not self.lam > 0:
            raise ParameterError(f"lambda must be > 0, got {self.lam}")

    @property
    def subcritical(self) -> bool:
        return self.beta < 0.5

    @property
    def regime(self) -> str:
        return "subcritical" if self.subcritical else "supercritical"

    @property
    def p(self) -> float:
        return self.beta / (1 - self.beta) if self.beta < 1 else math.inf

    def require_subcritical(self) -> None:
        if not self.subcritical:
            raise RegimeError(f"beta={self.beta} >= 1/2: no stationary law exists")

    def theta(self, i: int) -> float:
        if self.subcritical:
            return self.lam * self.p ** i
        return self.lam

    def log_theta(self, i: int) -> float:
        if self.subcritical:
            return math.log(self.lam) + i * math.log(self.p)
        return math.log(self.lam)

    @property
    def normalizer(self) -> float:
        """``C = beta*lam + beta*lam/(1-2*beta) = 2*beta*lam/(1-p)``."""
        self.require_subcritical()
        b, lam = self.beta, self.lam
        return b * lam + b * lam / (1 - 2 * b)

    @property
    def theta_total(self) -> float:
        self.require_subcritical()
        return self.beta * self.lam / (1 - 2 * self.beta)

    @property
    def rate_total(self) -> float:
        """``sum_i theta_i / i = -lam * log(1 - p)``."""
        self.require_subcritical()
        return -self.lam * math.log1p(-self.p)

    def to_json(self) -> dict:
        return {"beta": self.beta, "lambda": self.lam, "regime": self.regime}


def log_pi(m: AllelicPartition, law: LimitLaw) -> float:
    """Log stationary probability of ``m`` under the subcritical urn chain."""
    law.require_subcritical()
    log_lam, log_p = math.log(law.lam), math.log(law.p)
    prod = _log_poisson_product(m, lambda i: log_lam + i * log_p - math.log(i))
    return (math.log(law.beta * law.lam + m.norm) - math.log(law.normalizer)
            + prod - law.rate_total)


def pi(m: AllelicPartition, law: LimitLaw) -> float:
    return math.exp(log_pi(m, law))


def expected_size_mass(i: int, law: LimitLaw) -> float:
    """``E[i * m_i]`` under ``pi``: ``theta_i * (1 + i / C)``."""
    return law.theta(i) * (1 + i / law.normalizer)


def supercritical_marginal_pmf(i: int, k, lam: float):
    """Limit marginal of ``m_i`` when ``beta >= 1/2``: ``Po(lam / i)``."""
    from scipy.stats import poisson

    return poisson.pmf(k, lam / i)


def theta_limit(i: int, beta: float, lam: float) -> float:
    """Limit of ``theta_i`` as ``L -> inf`` with ``mu_L -> 0``."""
    return LimitLaw(beta, lam).theta(i)


# Augmented-Poisson representation ------------------------------------------


def j_pmf(j: int, law: LimitLaw) -> float:
    """Law of the augmenting index: tilted geometric on ``{0, 1, ...}``."""
    law.require_subcritical()
    p = law.p
    if j < 0:
        return 0.0
    if j == 0:
        return (1 - p) / 2
    return (1 - p) * p ** j / (2 * law.beta)


def poisson_truncation(law: LimitLaw, tol: float = 1e-12) -> tuple[int, float]:
    """Smallest ``I`` with ``sum_{i>I} theta_i / i < tol`` and that tail mass.

    The tail bounds the probability that any size beyond ``I`` is occupied
    by the independent Poisson part.
    """
    law.require_subcritical()
    tail = law.rate_total
    I = 0
    while tail >= tol:
        I += 1
        tail -= law.theta(I) / I
    return I, max(tail, 0.0)


@dataclass
class AugmentedSample:
    counts: np.ndarray  # (size, width) dense m_1..m_width
    J: np.ndarray
    truncation_mass: float

    def partitions(self) -> list[AllelicPartition]:
        return [AllelicPartition.from_dense(row) for row in self.counts]


def sample_augmented_poisson(law: LimitLaw, rng: np.random.Generator,
                             size: int = 1, tol: float = 1e-12) -> AugmentedSample:
    """Draw from ``pi`` as independent Poisson counts plus one block at ``J``.

    Sizes above the truncation index ``I`` are left empty in the Poisson
    part (reported as ``truncation_mass``); ``J`` itself is exact.
    """
    I, tail = poisson_truncation(law, tol)
    i = np.arange(1, I + 1)
    rates = law.lam * law.p ** i / i
    J = np.zeros(size, np.int64)
    jump = rng.random(size) >= (1 - law.p) / 2
    J[jump] = rng.geometric(1 - law.p, size=int(jump.sum()))
    width = max(I, int(J.max(initial=0)))
    counts = np.zeros((size, width), np.int64)
    counts[:, :I] = rng.poisson(rates, size=(size, I))
    counts[np.nonzero(jump)[0], J[jump] - 1] += 1
    return AugmentedSample(counts, J, tail)


def k_pmf(k, law: LimitLaw):
    """Law of the number of blocks: ``Po(-lam log(1-p))`` plus ``1{J >= 1}``."""
    from scipy.stats import poisson

    law.require_subcritical()
    a = law.rate_total
    p0 = j_pmf(0, law)
    k = np.asarray(k)
    out = p0 * poisson.pmf(k, a) + (1 - p0) * poisson.pmf(k - 1, a)
    return out if out.ndim else float(out)


def k_mean(law: LimitLaw, variant: str = "representation") -> float:
    """``E[K] = P(J >= 1) - lam * log(1 - p)``.

    ``variant="j0"`` returns ``P(J = 0) - lam * log(1 - p)`` instead, a form
    that is sometimes quoted; it disagrees with the representation by
    ``p`` and is provided only for comparison.
    """
    p0 = j_pmf(0, law)
    if variant == "representation":
        return 1 - p0 + law.rate_total
    if variant == "j0":
        return p0 + law.rate_total
    raise ValueError(f"unknown variant {variant!r}")


# Ewens sampling formula and the tilted Negative Binomial ---------------------


def log_esf(n: int, m: AllelicPartition, lam: float) -> float:
    """Log Ewens sampling probability of ``m`` among partitions of ``n``."""
    if m.norm != n:
        return -math.inf
    out = math.lgamma(n + 1) + math.lgamma(lam) - math.lgamma(lam + n)
    for i, c in m:
        out += c * math.log(lam / i) - math.lgamma(c + 1)
    return out


def esf(n: int, m: AllelicPartition, lam: float) -> float:
    return math.exp(log_esf(n, m, lam))


def log_nb_pmf(n: int, r: float, p: float) -> float:
    """``NB(n; r, p) = Gamma(r+n) / (n! Gamma(r)) p^n (1-p)^r``."""
    return (math.lgamma(r + n) - math.lgamma(n + 1) - math.lgamma(r)
            + n * math.log(p) + r * math.log1p(-p))


def log_tilted_nb_pmf(n: int, law: LimitLaw) -> float:
    """Log of ``mu(n) = (beta*lam + n) NB(n; lam, p) / (2 beta lam / (1-p))``."""
    law.require_subcritical()
    b, lam, p = law.beta, law.lam, law.p
    return (math.log(b * lam + n) - math.log(2 * b * lam / (1 - p))
            + log_nb_pmf(n, lam, p))


def tilted_nb_pmf(n: int, law: LimitLaw) -> float:
    return math.exp(log_tilted_nb_pmf(n, law))


def tilted_nb_mean(law: LimitLaw) -> float:
    """``E[N]`` under the tilted Negative Binomial (second NB moment)."""
    law.require_subcritical()
    b, lam, p = law.beta, law.lam, law.p
    mean = lam * p / (1 - p)
    second = mean * (1 + lam * p) / (1 - p)  # E[N^2] for NB(lam, p)
    return (b * lam * mean + second) / (b * lam + mean)


def mixture_identity(m: AllelicPartition, law: LimitLaw) -> tuple[float, float]:
    """``(pi(m), ESF_n(m) * mu(n))`` with ``n = norm(m)``; the two agree."""
    n = m.norm
    lhs = pi(m, law)
    rhs = math.exp(log_esf(n, m, law.lam) + log_tilted_nb_pmf(n, law))
    return lhs, rhs


def norm_marginal_by_enumeration(n: int, law: LimitLaw) -> float:
    """``sum_{|m| = n} pi(m)``, enumerating integer partitions of ``n``."""
    return math.fsum(pi(m, law) for m in partitions_of(n))
