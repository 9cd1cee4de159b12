"""Allelic partitions, chain parameters and elementary state arithmetic.

An allelic partition is the vector ``m = (m_1, m_2, ...)`` where ``m_i`` is
the number of blocks (species, alleles) holding exactly ``i`` items.  Every
reachable state has finite support, so only the nonzero counts are stored.
"""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

from .errors import InadmissibleMove, ParameterError


class AllelicPartition:
    """Immutable sparse map ``block size -> count`` with zero entries dropped."""

    __slots__ = ("_counts", "_hash")

    def __init__(self, counts: Mapping[int, int] | None = None):
        clean: dict[int, int] = {}
        for size, count in (counts or {}).items():
            size, count = int(size), int(count)
            if size < 1:
                raise ValueError(f"block sizes are positive integers, got {size}")
            if count < 0:
                raise ValueError(f"counts are non-negative, got m_{size}={count}")
            if count:
                clean[size] = count
        self._counts = dict(sorted(clean.items()))
        self._hash = None

    @classmethod
    def origin(cls) -> "AllelicPartition":
        return cls()

    @classmethod
    def from_dense(cls, counts) -> "AllelicPartition":
        """Build from a dense sequence whose index ``k`` holds ``m_{k+1}``."""
        return cls({k + 1: c for k, c in enumerate(counts) if c})

    def __getitem__(self, size: int) -> int:
        return self._counts.get(size, 0)

    def __iter__(self):
        return iter(self._counts.items())

    def __len__(self):
        return len(self._counts)

    def __eq__(self, other):
        if isinstance(other, AllelicPartition):
            return self._counts == other._counts
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(tuple(self._counts.items()))
        return self._hash

    def __repr__(self):
        return f"AllelicPartition({self._counts})"

    @property
    def counts(self) -> dict[int, int]:
        return dict(self._counts)

    def sizes(self) -> list[int]:
        """Occupied block sizes in increasing order."""
        return list(self._counts)

    @property
    def max_size(self) -> int:
        return max(self._counts, default=0)

    @property
    def norm(self) -> int:
        return sum(i * c for i, c in self._counts.items())

    @property
    def block_count(self) -> int:
        return sum(self._counts.values())

    def dense(self, width: int | None = None) -> list[int]:
        width = self.max_size if width is None else width
        return [self._counts.get(i, 0) for i in range(1, width + 1)]

    def shifted(self, size: int, delta: int) -> "AllelicPartition":
        """Return ``m + delta * e_size``; ``size == 0`` is a no-op."""
        if size == 0 or delta == 0:
            return self
        counts = dict(self._counts)
        value = counts.get(size, 0) + delta
        if value < 0:
            raise InadmissibleMove(f"m_{size} would become {value}")
        counts[size] = value
        return AllelicPartition(counts)

    # serialization
    def to_json(self) -> dict:
        return {"counts": {str(i): c for i, c in self._counts.items()}}

    @classmethod
    def from_json(cls, obj) -> "AllelicPartition":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls({int(k): v for k, v in obj["counts"].items()})

    def to_csv(self) -> str:
        return ";".join(f"{i}:{c}" for i, c in self._counts.items())

    @classmethod
    def from_csv(cls, line: str) -> "AllelicPartition":
        line = line.strip()
        if not line:
            return cls()
        pairs = (item.split(":") for item in line.split(";"))
        return cls({int(i): int(c) for i, c in pairs})


def norm(m: AllelicPartition) -> int:
    """Total number of items, ``sum_i i * m_i``."""
    return m.norm


def block_count(m: AllelicPartition) -> int:
    """Number of blocks, ``sum_i m_i``."""
    return m.block_count


def restrict(m: AllelicPartition, L: int) -> AllelicPartition:
    """Keep only the counts of block sizes ``1..L``."""
    return AllelicPartition({i: c for i, c in m if i <= L})


class MoveKind(enum.Enum):
    NEW_SINGLETON = "new"
    GROW = "grow"
    SHRINK = "shrink"
    BOUNDARY_REMOVE = "boundary_remove"
    BOUNDARY_INSERT = "boundary_insert"


@dataclass(frozen=True)
class Move:
    """One admissible transition of a partition-valued chain.

    ``size`` is the block size the move acts on: 1 for a new singleton,
    ``i`` for growing/shrinking a block of size ``i`` and ``L`` for the
    boundary moves of the maximal-count chain.
    """

    kind: MoveKind
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"moves act on positive block sizes, got {self.size}")

    def __repr__(self):
        names = {
            MoveKind.NEW_SINGLETON: "NewSingleton",
            MoveKind.GROW: "Grow",
            MoveKind.SHRINK: "Shrink",
            MoveKind.BOUNDARY_REMOVE: "BoundaryRemove",
            MoveKind.BOUNDARY_INSERT: "BoundaryInsert",
        }
        if self.kind is MoveKind.NEW_SINGLETON:
            return "NewSingleton"
        return f"{names[self.kind]}({self.size})"

    def delta(self) -> list[tuple[int, int]]:
        """Coordinate increments ``(size, +-1)``; size 0 entries are dropped."""
        i = self.size
        if self.kind is MoveKind.NEW_SINGLETON:
            out = [(1, 1)]
        elif self.kind is MoveKind.GROW:
            out = [(i, -1), (i + 1, 1)]
        elif self.kind is MoveKind.SHRINK:
            out = [(i, -1), (i - 1, 1)]
        elif self.kind is MoveKind.BOUNDARY_REMOVE:
            out = [(i, -1)]
        else:
            out = [(i, 1)]
        return [(s, d) for s, d in out if s > 0]

    def norm_change(self) -> int:
        return {
            MoveKind.NEW_SINGLETON: 1,
            MoveKind.GROW: 1,
            MoveKind.SHRINK: -1,
            MoveKind.BOUNDARY_REMOVE: -self.size,
            MoveKind.BOUNDARY_INSERT: self.size,
        }[self.kind]

    def inverse(self) -> "Move":
        i = self.size
        if self.kind is MoveKind.NEW_SINGLETON:
            return shrink(1)
        if self.kind is MoveKind.GROW:
            return shrink(i + 1)
        if self.kind is MoveKind.SHRINK:
            return new_singleton() if i == 1 else grow(i - 1)
        if self.kind is MoveKind.BOUNDARY_REMOVE:
            return boundary_insert(i)
        return boundary_remove(i)


def new_singleton() -> Move:
    return Move(MoveKind.NEW_SINGLETON, 1)


def grow(i: int) -> Move:
    return Move(MoveKind.GROW, i)


def shrink(i: int) -> Move:
    return Move(MoveKind.SHRINK, i)


def boundary_remove(L: int) -> Move:
    return Move(MoveKind.BOUNDARY_REMOVE, L)


def boundary_insert(L: int) -> Move:
    return Move(MoveKind.BOUNDARY_INSERT, L)


def is_admissible(m: AllelicPartition, mv: Move) -> bool:
    return all(m[s] + d >= 0 for s, d in mv.delta())


def apply_move(m: AllelicPartition, mv: Move) -> AllelicPartition:
    """Return the state reached from ``m`` by ``mv``.

    Raises InadmissibleMove when the move removes a block of a size that
    is not occupied.
    """
    counts = m.counts
    for size, d in mv.delta():
        value = counts.get(size, 0) + d
        if value < 0:
            raise InadmissibleMove(f"{mv!r} needs m_{size} >= 1 in {m!r}")
        counts[size] = value
    return AllelicPartition(counts)


def classify_move(m: AllelicPartition, m_new: AllelicPartition,
                  L: int | None = None) -> Move:
    """Identify the single move leading from ``m`` to ``m_new``.

    Boundary moves are only recognised when ``L`` is given.  Raises
    ValueError when the two states are not one move apart.
    """
    keys = set(m.sizes()) | set(m_new.sizes())
    diff = {i: m_new[i] - m[i] for i in keys if m_new[i] != m[i]}
    items = sorted(diff.items())
    if items == [(1, 1)]:
        return new_singleton()
    if items == [(1, -1)]:
        return shrink(1)
    if len(items) == 2:
        (a, da), (b, db) = items
        if b == a + 1 and da == -1 and db == 1:
            return grow(a)
        if b == a + 1 and da == 1 and db == -1:
            return shrink(b)
    if L is not None and len(items) == 1 and items[0][0] == L:
        return boundary_insert(L) if items[0][1] == 1 else boundary_remove(L)
    raise ValueError(f"{m!r} -> {m_new!r} is not a single move")


def partitions_of(n: int) -> Iterator[AllelicPartition]:
    """All allelic partitions with ``norm == n`` (integer partitions of n)."""

    def rec(remaining: int, largest: int):
        if remaining == 0:
            yield {}
            return
        for size in range(min(remaining, largest), 0, -1):
            for count in range(remaining // size, 0, -1):
                for rest in rec(remaining - size * count, size - 1):
                    out = dict(rest)
                    out[size] = count
                    yield out

    for counts in rec(n, n):
        yield AllelicPartition(counts)


def bounded_states(L: int, max_norm: int) -> Iterator[AllelicPartition]:
    """All states supported on sizes ``1..L`` with ``norm <= max_norm``."""

    def rec(size: int, budget: int):
        if size > L:
            yield {}
            return
        for count in range(budget // size + 1):
            for rest in rec(size + 1, budget - size * count):
                if count:
                    rest = dict(rest)
                    rest[size] = count
                yield rest

    for counts in rec(1, max_norm):
        yield AllelicPartition(counts)


@dataclass(frozen=True)
class ChainParams:
    """Parameters of a birth-and-death urn chain.

    ``L`` and ``mu`` are set together for the maximal-count chain
    (``finite`` mode) and left as ``None`` for the infinite chain.
    Numeric fields may be floats or ``fractions.Fraction`` for exact
    arithmetic.
    """

    beta: float
    lam: float
    L: int | None = None
    mu: float | None = None

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ParameterError(f"beta must lie in (0,1], got {self.beta}")
        if not self.lam > 0:
            raise ParameterError(f"lambda must be > 0, got {self.lam}")
        if (self.L is None) != (self.mu is None):
            raise ParameterError("L and mu must be given together")
        if self.L is not None:
            if int(self.L) != self.L or self.L < 1:
                raise ParameterError(f"L must be a positive integer, got {self.L}")
            if not self.mu > 0:
                raise ParameterError(f"mu must be > 0, got {self.mu}")
            if self.beta == 1:
                warnings.warn("beta=1 with a maximal-count chain: every (1-beta) "
                              "transition has probability 0 and the chain only grows",
                              stacklevel=3)

    @property
    def finite(self) -> bool:
        return self.L is not None

    def with_mu(self, L: int, mu: float) -> "ChainParams":
        return ChainParams(self.beta, self.lam, L, mu)

    def infinite(self) -> "ChainParams":
        return ChainParams(self.beta, self.lam)

    def to_json(self) -> dict:
        out = {"beta": float(self.beta), "lambda": float(self.lam)}
        if self.finite:
            out.update(L=int(self.L), mu=float(self.mu))
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ChainParams":
        return cls(obj["beta"], obj["lambda"], obj.get("L"), obj.get("mu"))


@dataclass(frozen=True)
class MuSchedule:
    """Rule ``L -> mu_L`` for the boundary immigration weight.

    Built-in rules are strictly decreasing with ``L * mu_L -> 0``; a custom
    table is validated for monotonicity over its keys.
    """

    name: str
    rule: Callable[[int], float] = field(repr=False, compare=False)

    def __call__(self, L: int) -> float:
        value = self.rule(L)
        if not value > 0:
            raise ParameterError(f"mu_{L} must be > 0, got {value}")
        return value

    @classmethod
    def inverse_square(cls, c: float = 1.0) -> "MuSchedule":
        return cls(f"inverse_square(c={c})", lambda L: c / L**2)

    @classmethod
    def inverse_log(cls, c: float = 1.0) -> "MuSchedule":
        return cls(f"inverse_log(c={c})", lambda L: c / (L * math.log(L + 1)))

    @classmethod
    def constant(cls, mu: float) -> "MuSchedule":
        return cls(f"constant({mu})", lambda L: mu)

    @classmethod
    def table(cls, values: Mapping[int, float]) -> "MuSchedule":
        values = dict(sorted(values.items()))
        keys = list(values)
        for a, b in zip(keys, keys[1:]):
            if not values[b] < values[a]:
                raise ParameterError("a mu schedule must be strictly decreasing in L")

        def rule(L):
            try:
                return values[L]
            except KeyError:
                raise ParameterError(f"mu schedule table has no entry for L={L}") from None

        return cls("table", rule)

    def is_decreasing(self, L_max: int, L_min: int = 1) -> bool:
        vals = [self(L) for L in range(L_min, L_max + 1)]
        return all(b < a for a, b in zip(vals, vals[1:]))
