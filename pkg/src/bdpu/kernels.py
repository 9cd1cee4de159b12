"""Transition kernels of the partition-valued chains and the particle process.

Three kernels act on allelic partitions:

* the birth-and-death urn (``bdpu_transitions``), normaliser ``beta*lam + n``;
* the maximal-count chain on sizes ``1..L`` (``maximal_count_transitions``),
  normaliser ``beta*lam + (1-beta)*mu + n``;
* the modified infinite chain (``modified_chain_transitions``), in which the
  ``L+1 -> L`` shrink has weight ``(1-beta)*mu_L`` regardless of ``m_{L+1}``.

Weights are computed with plain arithmetic, so passing ``Fraction`` parameters
gives exact rational distributions.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import ParameterError, StateExceedsCapacity
from .partition import (
    AllelicPartition,
    ChainParams,
    Move,
    apply_move,
    boundary_insert,
    boundary_remove,
    grow,
    is_admissible,
    new_singleton,
    shrink,
)


@dataclass(frozen=True)
class TransitionDistribution:
    """Ordered ``(move, probability)`` pairs with the kernel's normaliser."""

    moves: tuple[tuple[Move, float], ...]
    normalizer: float

    def __iter__(self):
        return iter(self.moves)

    def __len__(self):
        return len(self.moves)

    def as_dict(self) -> dict[Move, float]:
        out: dict[Move, float] = {}
        for mv, p in self.moves:
            out[mv] = out.get(mv, 0) + p
        return out

    def prob(self, mv: Move) -> float:
        return self.as_dict().get(mv, 0)

    def total(self) -> float:
        return sum(p for _, p in self.moves)

    def check(self, m: AllelicPartition, tol: float = 1e-12) -> None:
        if abs(float(self.total()) - 1.0) > tol:
            raise AssertionError(f"probabilities sum to {self.total()}")
        for mv, p in self.moves:
            if p < 0 or not is_admissible(m, mv):
                raise AssertionError(f"{mv!r} with p={p} is not admissible from {m!r}")


def _normalise(weights: list[tuple[Move, float]], total) -> TransitionDistribution:
    moves = tuple((mv, w / total) for mv, w in weights if w > 0)
    return TransitionDistribution(moves, total)


def bdpu_transitions(m: AllelicPartition, p: ChainParams) -> TransitionDistribution:
    """Birth-and-death urn kernel.

    A new singleton has weight ``beta*lam``; each occupied size ``i`` grows
    with weight ``beta*i*m_i`` and shrinks with ``(1-beta)*i*m_i``.  A shrink
    of a singleton removes the block.
    """
    if p.finite:
        raise ParameterError("bdpu_transitions needs infinite-mode parameters")
    beta, lam = p.beta, p.lam
    weights = [(new_singleton(), beta * lam)]
    for i, c in m:
        weights.append((grow(i), beta * i * c))
    for i, c in m:
        weights.append((shrink(i), (1 - beta) * i * c))
    return _normalise(weights, beta * lam + m.norm)


def bernoulli_birth_prob(m: AllelicPartition, p: ChainParams):
    """Probability that the next step adds an item: ``beta(lam+n)/(beta*lam+n)``."""
    n = m.norm
    return p.beta * (p.lam + n) / (p.beta * p.lam + n)


def maximal_count_transitions(m: AllelicPartition, p: ChainParams) -> TransitionDistribution:
    """Kernel of the chain whose blocks never exceed ``L`` items.

    An ``L``-block that would grow leaves the system (BoundaryRemove) and
    ``L``-blocks immigrate with weight ``(1-beta)*mu`` (BoundaryInsert).
    """
    if not p.finite:
        raise ParameterError("maximal_count_transitions needs L and mu")
    L, beta, lam, mu = p.L, p.beta, p.lam, p.mu
    if m.max_size > L:
        raise StateExceedsCapacity(f"{m!r} has blocks larger than L={L}")
    weights = [(new_singleton(), beta * lam)]
    for i, c in m:
        weights.append((grow(i) if i < L else boundary_remove(L), beta * i * c))
    for i, c in m:
        weights.append((shrink(i), (1 - beta) * i * c))
    weights.append((boundary_insert(L), (1 - beta) * mu))
    return _normalise(weights, beta * lam + (1 - beta) * mu + m.norm)


def modified_chain_transitions(m: AllelicPartition, p: ChainParams, L: int,
                               mu_L) -> TransitionDistribution:
    """Kernel of the modified infinite chain used for the embedding.

    Identical to the urn kernel except that the ``L+1 -> L`` shrink carries
    weight ``(1-beta)*mu_L`` instead of ``(1-beta)*(L+1)*m_{L+1}``.  When
    ``m_{L+1} = 0`` that weight immigrates a fresh ``L``-block instead, so
    the ``mu_L`` mass is always an event on the first ``L`` coordinates and
    the normaliser ``beta*lam + (1-beta)*mu_L + n - (1-beta)(L+1)m_{L+1}``
    equals the sum of weights in every state.
    """
    beta, lam = p.beta, p.lam
    top = L + 1
    weights = [(new_singleton(), beta * lam)]
    for i, c in m:
        weights.append((grow(i), beta * i * c))
    for i, c in m:
        if i != top:
            weights.append((shrink(i), (1 - beta) * i * c))
    edge = shrink(top) if m[top] >= 1 else boundary_insert(L)
    weights.append((edge, (1 - beta) * mu_L))
    total = beta * lam + (1 - beta) * mu_L + m.norm - (1 - beta) * top * m[top]
    return _normalise(weights, total)


def touches_first(mv: Move, L: int) -> bool:
    """Whether ``mv`` changes any of the counts ``m_1..m_L``."""
    return any(s <= L for s, _ in mv.delta())


def step(m: AllelicPartition, dist: TransitionDistribution,
         rng: np.random.Generator) -> tuple[AllelicPartition, Move]:
    """Sample one move from ``dist`` by cumulative scan and apply it."""
    u = rng.random()
    acc = 0.0
    chosen = dist.moves[-1][0]
    for mv, prob in dist.moves:
        acc += float(prob)
        if u < acc:
            chosen = mv
            break
    return apply_move(m, chosen), chosen


# Particle process -----------------------------------------------------------

ParticleState = tuple  # ordered tuple of hashable observation labels


class LabelSource:
    """Fresh labels for draws from a nonatomic base measure (monotone counter)."""

    def __init__(self, start: int = 0):
        self._counter = itertools.count(start)

    def __call__(self) -> int:
        return next(self._counter)


@dataclass(frozen=True)
class ParticleMove:
    kind: str  # "fresh", "copy" or "delete"
    index: int = -1


def induced_partition(x: Sequence[Hashable]) -> AllelicPartition:
    """``m_i`` = number of distinct labels occurring exactly ``i`` times."""
    return AllelicPartition(Counter(Counter(x).values()))


def particle_transitions(x: ParticleState, p: ChainParams,
                         fresh_label: Hashable | None = None):
    """Enumerate the particle-process transitions from ``x``.

    Returns ``(new_state, probability, ParticleMove)`` triples: appending a
    fresh label (weight ``beta*lam``), appending a copy of ``x_j`` (weight
    ``beta`` each) and deleting ``x_j`` (weight ``1-beta`` each), all over
    ``beta*lam + N``.
    """
    x = tuple(x)
    if fresh_label is None:
        fresh_label = object()
    if fresh_label in x:
        raise ValueError("fresh label already present in the state")
    N = len(x)
    total = p.beta * p.lam + N
    out = [(x + (fresh_label,), p.beta * p.lam / total, ParticleMove("fresh"))]
    if p.beta > 0:
        for j in range(N):
            out.append((x + (x[j],), p.beta / total, ParticleMove("copy", j)))
    if p.beta < 1:
        for j in range(N):
            out.append((x[:j] + x[j + 1:], (1 - p.beta) / total, ParticleMove("delete", j)))
    return out


def particle_step(x: list, p: ChainParams, rng: np.random.Generator,
                  labels: LabelSource) -> ParticleMove:
    """Advance a particle state in place by one transition."""
    N = len(x)
    u = rng.random() * (p.beta * p.lam + N)
    if u < p.beta * p.lam:
        x.append(labels())
        return ParticleMove("fresh")
    u -= p.beta * p.lam
    j = min(int(u), N - 1)
    if u - j < p.beta:
        x.append(x[j])
        return ParticleMove("copy", j)
    x[j] = x[-1]
    x.pop()
    return ParticleMove("delete", j)


def pushforward_partition_kernel(x: ParticleState, p: ChainParams) -> dict[Move, float]:
    """Push the particle kernel through ``induced_partition``.

    Each particle transition is classified by comparing induced partitions,
    independently of how the particle move was generated.
    """
    from .partition import classify_move

    m = induced_partition(x)
    out: dict[Move, float] = {}
    for x_new, prob, _ in particle_transitions(x, p):
        mv = classify_move(m, induced_partition(x_new))
        out[mv] = out.get(mv, 0) + prob
    return out


KERNELS = ("bdpu", "maximal", "modified")


def transitions(kernel: str, m: AllelicPartition, p: ChainParams,
                L: int | None = None, mu_L=None) -> TransitionDistribution:
    """Dispatch on kernel name; ``modified`` takes ``L`` and ``mu_L``."""
    if kernel == "bdpu":
        return bdpu_transitions(m, p)
    if kernel == "maximal":
        return maximal_count_transitions(m, p)
    if kernel == "modified":
        return modified_chain_transitions(m, p, L, mu_L)
    raise ParameterError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
