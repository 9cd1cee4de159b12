"""The tridiagonal system behind the maximal-count weights, solved directly.

``theta`` solves ``A theta = rhs`` where ``A`` has unit diagonal, constant
sub-diagonal ``-beta`` and super-diagonal ``-(1-beta)``, and
``rhs = beta*lam*e_1 + (1-beta)*mu*e_L``.  This module eliminates the system
numerically and provides the determinant recursion and inverse-matrix
entries, so it can serve as an independent check on the closed forms.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ParameterError, SingularSystem
from .partition import MuSchedule
from .stationary import ThetaVector, is_half


@dataclass(frozen=True)
class TridiagonalSystem:
    L: int
    beta: float

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or self.L < 1:
            raise ParameterError(f"L must be a positive integer, got {self.L!r}")
        if not 0 <= self.beta <= 1:
            raise ParameterError(f"beta must lie in [0,1], got {self.beta}")

    @property
    def sub(self) -> float:
        return -self.beta

    @property
    def sup(self) -> float:
        return -(1 - self.beta)

    def rhs(self, lam: float, mu: float) -> np.ndarray:
        b = np.zeros(self.L)
        b[0] += self.beta * lam
        b[-1] += (1 - self.beta) * mu
        return b

    def dense(self) -> np.ndarray:
        A = np.eye(self.L)
        k = np.arange(self.L - 1)
        A[k + 1, k] = self.sub
        A[k, k + 1] = self.sup
        return A

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=float)
        y[1:] += self.sub * x[:-1]
        y[:-1] += self.sup * x[1:]
        return y

    def residual(self, x: np.ndarray, lam: float, mu: float) -> float:
        """``||A x - rhs||_inf``."""
        return float(np.max(np.abs(self.apply(x) - self.rhs(lam, mu))))

    def redundant_residual(self, x: np.ndarray, lam: float, mu: float) -> float:
        """Residual of ``beta*x_L + (1-beta)*x_1 = beta*lam + (1-beta)*mu``.

        Summing the rows of ``A x = rhs`` yields this relation, so it is a
        consistency check rather than an extra constraint.
        """
        b = self.beta
        return abs(b * x[-1] + (1 - b) * x[0] - (b * lam + (1 - b) * mu))


@njit(cache=True)
def _eliminate(sub, diag, sup, rhs, x):
    """Returns 0 on success or the 1-based row of a zero pivot."""
    n = len(rhs)
    c = np.empty(n)
    d = np.empty(n)
    piv = diag
    if piv == 0.0:
        return 1
    c[0] = sup / piv
    d[0] = rhs[0] / piv
    for k in range(1, n):
        piv = diag - sub * c[k - 1]
        if piv == 0.0 or not np.isfinite(piv):
            return k + 1
        c[k] = sup / piv
        d[k] = (rhs[k] - sub * d[k - 1]) / piv
    x[n - 1] = d[n - 1]
    for k in range(n - 2, -1, -1):
        x[k] = d[k] - c[k] * x[k + 1]
    return 0


def _thomas(sub: float, diag: float, sup: float, rhs: np.ndarray) -> np.ndarray:
    """Forward elimination and back substitution for constant bands."""
    x = np.empty(len(rhs))
    row = _eliminate(float(sub), float(diag), float(sup), np.asarray(rhs, dtype=float), x)
    if row:
        raise SingularSystem(f"zero pivot in row {row}")
    return x


def solve_numeric(system: TridiagonalSystem, lam: float, mu: float) -> ThetaVector:
    """Solve for ``theta`` by banded elimination.

    The weights ``w_i`` come from a second solve with ``(lam, mu) = (1, 0)``.
    """
    b = system.beta
    x = _thomas(system.sub, 1.0, system.sup, system.rhs(lam, mu))
    w = _thomas(system.sub, 1.0, system.sup, system.rhs(1.0, 0.0))
    tol = 1e-10 * max(lam, mu, 1e-300)
    res = system.residual(x, lam, mu)
    if res > tol:
        raise SingularSystem(f"residual {res:.3g} exceeds {tol:.3g}")
    return ThetaVector(system.L, b, lam, mu, x, w)


# Determinants --------------------------------------------------------------


def determinant_recursion(l: int, beta: float) -> float:
    """``d_l = d_{l-1} - beta(1-beta) d_{l-2}`` with ``d_0 = d_1 = 1``."""
    if l < 0:
        raise ValueError("l must be non-negative")
    prod = beta * (1 - beta)
    prev, cur = 1.0, 1.0
    for _ in range(l - 1):
        prev, cur = cur, cur - prod * prev
    return cur


def log_determinant(l: int, beta: float) -> float:
    """``log d_l`` from the closed form, stable for large ``l``."""
    if l < 0:
        raise ValueError("l must be non-negative")
    if beta in (0, 1) or l == 0:
        return 0.0
    if is_half(beta):
        return math.log(l + 1) - l * math.log(2)
    if beta < 0.5:
        p = beta / (1 - beta)
        return ((l + 1) * math.log1p(-beta) + math.log(-math.expm1((l + 1) * math.log(p)))
                - math.log(1 - 2 * beta))
    q = (1 - beta) / beta
    return ((l + 1) * math.log(beta) + math.log(-math.expm1((l + 1) * math.log(q)))
            - math.log(2 * beta - 1))


def determinant_closed_form(l: int, beta: float) -> float:
    """``((1-beta)^(l+1) - beta^(l+1)) / (1 - 2 beta)``, or ``(l+1) 2^-l`` at 1/2."""
    if beta == 0.5:
        return math.ldexp(l + 1, -l)
    return math.exp(log_determinant(l, beta))


def inverse_column_entries(L: int, beta: float, i: int) -> tuple[float, float]:
    """Entries ``(a_i1, a_iL)`` of ``A^-1`` from determinant ratios."""
    if not 1 <= i <= L:
        raise ValueError(f"need 1 <= i <= L, got i={i}, L={L}")
    if not 0 < beta < 1:
        raise ParameterError("inverse entries need beta in (0,1)")
    logdL = log_determinant(L, beta)
    a1 = math.exp((i - 1) * math.log(beta) + log_determinant(L - i, beta) - logdL)
    aL = math.exp((L - i) * math.log1p(-beta) + log_determinant(i - 1, beta) - logdL)
    return a1, aL


def theta_from_inverse(L: int, beta: float, lam: float, mu: float) -> np.ndarray:
    """``theta_i = beta*lam*a_i1 + (1-beta)*mu*a_iL``."""
    out = np.empty(L)
    for i in range(1, L + 1):
        a1, aL = inverse_column_entries(L, beta, i)
        out[i - 1] = beta * lam * a1 + (1 - beta) * mu * aL
    return out


def diagnostic_csv(L: int, beta: float, lam: float, mu: float) -> str:
    """CSV rows ``i, theta_i, w_i, a_i1, a_iL`` from the numeric solve."""
    th = solve_numeric(TridiagonalSystem(L, beta), lam, mu)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["i", "theta", "w", "a_i1", "a_iL"])
    for i in range(1, L + 1):
        a1, aL = inverse_column_entries(L, beta, i)
        wr.writerow([i, repr(th[i]), repr(float(th.weights[i - 1])), repr(a1), repr(aL)])
    return buf.getvalue()


# Growth of theta in L --------------------------------------------------------


def _margin_vector(L: int, beta: float, lam: float, mu_L: float, mu_prev: float) -> np.ndarray:
    """``theta_i^(L) - theta_i^(L-1)`` for i = 1..L, in cancellation-free form.

    Extending ``theta^(L-1)`` by ``theta_L^(L-1) = mu_(L-1)``, the difference
    factors as ``g_i * bracket`` with ``g_i >= 0``, so its sign does not
    depend on ``i``.
    """
    i = np.arange(1, L + 1, dtype=float)
    if is_half(beta):
        return i * (lam - mu_prev + L * (mu_L - mu_prev)) / (L * (L + 1))
    if beta < 0.5:
        p = beta / (1 - beta)
        lp = math.log(p)
        g = -np.expm1(i * lp) / -math.expm1(L * lp)
        bracket = (math.exp(L * lp) * (1 - p) * (lam - mu_L) / -math.expm1((L + 1) * lp)
                   + (mu_L - mu_prev))
    else:
        q = (1 - beta) / beta
        lq = math.log(q)
        g = np.exp((L - i) * lq) * -np.expm1(i * lq) / -math.expm1(L * lq)
        bracket = (1 - q) * (lam - mu_L) / -math.expm1((L + 1) * lq) + (mu_L - mu_prev)
    return g * bracket


def monotonicity_margin(L: int, i: int, beta: float, lam: float,
                        schedule: MuSchedule) -> float:
    """``theta_i^(L) - theta_i^(L-1)`` under ``mu_L = schedule(L)``."""
    if L < 2 or not 1 <= i <= L - 1:
        raise ValueError(f"need L >= 2 and 1 <= i <= L-1, got L={L}, i={i}")
    return float(_margin_vector(L, beta, lam, schedule(L), schedule(L - 1))[i - 1])


@dataclass
class MonotonicityScan:
    beta: float
    lam: float
    schedule: str
    L_max: int
    min_margin: np.ndarray  # index L-2 holds min_i margin at L
    L0: int | None

    @property
    def negative_L(self) -> list[int]:
        return [k + 2 for k in np.nonzero(self.min_margin < 0)[0]]

    def to_dict(self) -> dict:
        return {"beta": self.beta, "lambda": self.lam, "schedule": self.schedule,
                "L_max": self.L_max, "L0": self.L0,
                "negative_L": self.negative_L[:50],
                "n_negative": len(self.negative_L)}


def monotonicity_scan(beta: float, lam: float, schedule: MuSchedule,
                      L_max: int = 500) -> MonotonicityScan:
    """Minimum margin over ``i`` for every ``L`` in ``2..L_max``.

    ``L0`` is the smallest ``L`` from which every margin up to ``L_max`` is
    non-negative, or ``None`` when the margin at ``L_max`` is negative.
    Emits a warning when the schedule does not decrease.
    """
    if not schedule.is_decreasing(L_max):
        warnings.warn(f"schedule {schedule.name} is not strictly decreasing up to "
                      f"L={L_max}; margins may stay negative", stacklevel=2)
    mins = np.empty(L_max - 1)
    for L in range(2, L_max + 1):
        mins[L - 2] = _margin_vector(L, beta, lam, schedule(L), schedule(L - 1))[:-1].min()
    neg = np.nonzero(mins < 0)[0]
    if len(neg) == 0:
        L0 = 2
    elif neg[-1] == len(mins) - 1:
        L0 = None
    else:
        L0 = int(neg[-1]) + 3
    return MonotonicityScan(beta, lam, schedule.name, L_max, mins, L0)
