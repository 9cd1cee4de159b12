"""Compiled trajectory engine for the three partition-valued chains.

The state is kept as a dense count array plus a Fenwick tree over the item
mass ``i * m_i`` of each block size, so a move is sampled in O(log S) for
the largest occupied size S.  Each step consumes one uniform: it selects
the move family and, inside the mass segment of the selected size, the
residual fraction decides between growth (fraction < beta) and shrinkage.

Uniforms come in chunks from a ``numpy.random.Generator``; replicas use
independent child streams from ``SeedSequence(seed).spawn``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ParameterError
from .partition import AllelicPartition, ChainParams

KERNEL_CODES = {"bdpu": 0, "maximal": 1, "modified": 2}

# Action codes used inside the compiled loop.
_NEW, _GROW, _SHRINK, _INSERT, _REMOVE = 0, 1, 2, 3, 4

CHUNK = 1 << 18
TRACE_SCHEMA = "bdpu-trajectory/1"


@njit(cache=True)
def _fw_add(tree, i, delta):
    cap = tree.shape[0] - 1
    while i <= cap:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def _fw_prefix(tree, i):
    s = 0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def _fw_find(tree, v):
    # smallest i with prefix(i) > v, and v - prefix(i-1); cap is a power of 2
    cap = tree.shape[0] - 1
    pos = 0
    bit = cap
    while bit > 0:
        nxt = pos + bit
        if nxt <= cap and tree[nxt] <= v:
            pos = nxt
            v -= tree[nxt]
        bit >>= 1
    return pos + 1, v


@njit(cache=True)
def _bump(counts, tree, i, d):
    counts[i] += d
    _fw_add(tree, i, d * i)


@njit(cache=True)
def _widen(counts, cap):
    new_cap = cap * 2
    wide = np.zeros(new_cap + 2, np.int64)
    wide[: counts.shape[0]] = counts
    tree = np.zeros(new_cap + 1, np.int64)
    for i in range(1, new_cap + 1):
        if wide[i] != 0:
            _fw_add(tree, i, i * wide[i])
    return wide, tree


@njit(cache=True)
def _run(kind, beta, lam, mu, L, counts, tree, n, K, u,
         trace_norm, trace_k, trace_sizes, sig_t, sig_cls, sig_state, t0):
    """Advance ``len(u)`` steps.  Returns (counts, tree, n, K, n_sigma)."""
    cap = tree.shape[0] - 1
    bl = beta * lam
    eta = bl + (1.0 - beta) * mu
    top = L + 1
    record = trace_norm.shape[0] > 0
    n_sizes = trace_sizes.shape[0]
    want_sigma = sig_t.shape[0] > 0
    nsig = 0
    for t in range(u.shape[0]):
        act = _NEW
        i = 1
        if kind == 0:
            x = u[t] * (bl + n)
            if x >= bl:
                v = x - bl
                if v >= n:
                    v = n - 0.5
                i, r = _fw_find(tree, v)
                act = _GROW if r < beta * i * counts[i] else _SHRINK
        elif kind == 1:
            x = u[t] * (eta + n)
            if x >= eta:
                v = x - eta
                if v >= n:
                    v = n - 0.5
                i, r = _fw_find(tree, v)
                if r < beta * i * counts[i]:
                    act = _GROW if i < L else _REMOVE
                else:
                    act = _SHRINK
            elif x >= bl:
                act = _INSERT
                i = L
        else:
            mtop = counts[top]
            x = u[t] * (eta + n - (1.0 - beta) * top * mtop)
            if x >= eta:
                r0 = x - eta
                low = _fw_prefix(tree, L)
                top_grow = beta * top * mtop
                if r0 < low:
                    i, r = _fw_find(tree, r0)
                    act = _GROW if r < beta * i * counts[i] else _SHRINK
                elif r0 < low + top_grow:
                    act = _GROW
                    i = top
                elif n - low - top * mtop <= 0:
                    # float edge with nothing above L+1
                    act = _GROW
                    i = top
                else:
                    v = r0 - top_grow + top * mtop
                    if v >= n:
                        v = n - 0.5
                    i, r = _fw_find(tree, v)
                    if i <= top:
                        # float edge at the segment boundary
                        i = top + 1
                        while counts[i] == 0:
                            i += 1
                        r = 0.0
                    act = _GROW if r < beta * i * counts[i] else _SHRINK
            elif x >= bl:
                if mtop > 0:
                    act = _SHRINK
                    i = top
                else:
                    act = _INSERT
                    i = L
            if want_sigma:
                cls = -1
                if act == _NEW:
                    cls = 0
                elif act == _GROW and i <= L:
                    cls = i
                elif act == _SHRINK and i <= L:
                    cls = L + i
                elif act == _INSERT or (act == _SHRINK and i == top):
                    cls = 2 * L + 1
                if cls >= 0:
                    sig_t[nsig] = t0 + t + 1
                    sig_cls[nsig] = cls
                    for s in range(L):
                        sig_state[nsig, s] = counts[s + 1]
                    nsig += 1

        if act == _NEW:
            _bump(counts, tree, 1, 1)
            n += 1
            K += 1
        elif act == _GROW:
            if i + 1 > cap:
                counts, tree = _widen(counts, cap)
                cap = tree.shape[0] - 1
            _bump(counts, tree, i, -1)
            _bump(counts, tree, i + 1, 1)
            n += 1
        elif act == _SHRINK:
            _bump(counts, tree, i, -1)
            if i > 1:
                _bump(counts, tree, i - 1, 1)
            else:
                K -= 1
            n -= 1
        elif act == _INSERT:
            _bump(counts, tree, L, 1)
            n += L
            K += 1
        else:
            _bump(counts, tree, L, -1)
            n -= L
            K -= 1

        if record:
            trace_norm[t] = n
            trace_k[t] = K
            for s in range(n_sizes):
                trace_sizes[s, t] = counts[s + 1] if s + 1 <= cap else 0
    return counts, tree, n, K, nsig


_EMPTY_I64 = np.zeros(0, np.int64)
_EMPTY_I64_2D = np.zeros((0, 0), np.int64)


def _pow2_at_least(k: int) -> int:
    cap = 8
    while cap < k:
        cap *= 2
    return cap


class FastChain:
    """Mutable compiled-chain state for one trajectory.

    ``kernel`` is one of ``bdpu``, ``maximal`` or ``modified``; the modified
    kernel needs ``L`` and ``mu_L``, the maximal kernel reads them from
    ``params``.
    """

    def __init__(self, params: ChainParams, kernel: str = "bdpu",
                 initial: AllelicPartition | None = None,
                 L: int | None = None, mu_L: float | None = None):
        if kernel not in KERNEL_CODES:
            raise ParameterError(f"unknown kernel {kernel!r}")
        self.params = params
        self.kernel = kernel
        self.code = KERNEL_CODES[kernel]
        if kernel == "bdpu":
            if params.finite:
                raise ParameterError("the bdpu kernel takes infinite-mode parameters")
            self.L, self.mu = 0, 0.0
        elif kernel == "maximal":
            if not params.finite:
                raise ParameterError("the maximal kernel needs L and mu")
            self.L, self.mu = int(params.L), float(params.mu)
        else:
            if L is None or mu_L is None:
                raise ParameterError("the modified kernel needs L and mu_L")
            if not mu_L > 0 or L < 1:
                raise ParameterError("modified kernel needs L >= 1 and mu_L > 0")
            self.L, self.mu = int(L), float(mu_L)
        initial = initial or AllelicPartition()
        if kernel == "maximal" and initial.max_size > self.L:
            raise ParameterError("initial state exceeds the maximal count L")
        cap = _pow2_at_least(max(initial.max_size, self.L + 1, 1) + 1)
        self.counts = np.zeros(cap + 2, np.int64)
        for i, c in initial:
            self.counts[i] = c
        self.tree = np.zeros(cap + 1, np.int64)
        for i, c in initial:
            _fw_add(self.tree, i, i * c)
        self.n = initial.norm
        self.K = initial.block_count
        self.step_count = 0

    def advance(self, u: np.ndarray, trace_norm=_EMPTY_I64, trace_k=_EMPTY_I64,
                trace_sizes=_EMPTY_I64_2D, sigma=None) -> int:
        """Run ``len(u)`` steps; returns the number of sigma events written."""
        if sigma is None:
            sig_t, sig_cls, sig_state = _EMPTY_I64, _EMPTY_I64, _EMPTY_I64_2D
        else:
            sig_t, sig_cls, sig_state = sigma
        self.counts, self.tree, self.n, self.K, nsig = _run(
            self.code, float(self.params.beta), float(self.params.lam), self.mu,
            self.L, self.counts, self.tree, self.n, self.K, u,
            trace_norm, trace_k, trace_sizes, sig_t, sig_cls, sig_state,
            self.step_count)
        self.step_count += len(u)
        return nsig

    def partition(self) -> AllelicPartition:
        nz = np.nonzero(self.counts)[0]
        return AllelicPartition({int(i): int(self.counts[i]) for i in nz})

    def first_counts(self, k: int) -> np.ndarray:
        out = np.zeros(k, np.int64)
        w = min(k, len(self.counts) - 1)
        out[:w] = self.counts[1: w + 1]
        return out


# Observers ------------------------------------------------------------------


class Observer:
    """Hook points called by :func:`simulate`; subclasses override what they need.

    ``track_sizes`` asks the engine to trace ``m_1..m_k`` every step;
    ``needs_trace`` asks for per-step norm and block count traces;
    ``needs_sigma`` asks for stopping-time records (modified kernel only).
    """

    needs_trace = False
    track_sizes = 0
    needs_sigma = False

    def on_chunk(self, start: int, norm: np.ndarray, blocks: np.ndarray,
                 sizes: np.ndarray) -> None:
        pass

    def on_sigma(self, times: np.ndarray, classes: np.ndarray,
                 states: np.ndarray) -> None:
        pass

    def result(self) -> dict:
        return {}


class Occupation(Observer):
    """Per-step occupation histograms of norm, block count and ``m_1..m_k``.

    Steps ``<= burn_in`` are discarded.  Also keeps per-step sums of
    ``i * m_i`` and batch means of norm and block count for error bars.
    """

    needs_trace = True

    def __init__(self, burn_in: int = 0, sizes: int = 5, batch: int = 1 << 14):
        self.burn_in = burn_in
        self.track_sizes = sizes
        self.batch = batch
        self.samples = 0
        self.norm_hist = np.zeros(0, np.int64)
        self.block_hist = np.zeros(0, np.int64)
        self.size_hists = [np.zeros(0, np.int64) for _ in range(sizes)]
        self.mass_sums = np.zeros(sizes)
        self._batch_norm: list[float] = []
        self._batch_blocks: list[float] = []
        self._pending_norm = np.zeros(0, np.int64)
        self._pending_blocks = np.zeros(0, np.int64)

    @staticmethod
    def _accumulate(hist, values):
        add = np.bincount(values)
        if len(add) > len(hist):
            hist = np.concatenate([hist, np.zeros(len(add) - len(hist), np.int64)])
        hist[: len(add)] += add
        return hist

    def on_chunk(self, start, norm, blocks, sizes):
        skip = max(0, self.burn_in - start)
        if skip >= len(norm):
            return
        norm, blocks, sizes = norm[skip:], blocks[skip:], sizes[:, skip:]
        self.samples += len(norm)
        self.norm_hist = self._accumulate(self.norm_hist, norm)
        self.block_hist = self._accumulate(self.block_hist, blocks)
        for s in range(self.track_sizes):
            self.size_hists[s] = self._accumulate(self.size_hists[s], sizes[s])
            self.mass_sums[s] += (s + 1) * sizes[s].sum()
        pn = np.concatenate([self._pending_norm, norm])
        pb = np.concatenate([self._pending_blocks, blocks])
        full = len(pn) // self.batch * self.batch
        if full:
            self._batch_norm.extend(pn[:full].reshape(-1, self.batch).mean(axis=1))
            self._batch_blocks.extend(pb[:full].reshape(-1, self.batch).mean(axis=1))
        self._pending_norm, self._pending_blocks = pn[full:], pb[full:]

    def pmf(self, hist) -> np.ndarray:
        return hist / max(self.samples, 1)

    def mean_with_se(self, which: str = "blocks") -> tuple[float, float]:
        """Time average and batch-means standard error."""
        hist = self.block_hist if which == "blocks" else self.norm_hist
        batches = np.array(self._batch_blocks if which == "blocks" else self._batch_norm)
        mean = float(np.dot(np.arange(len(hist)), hist) / max(self.samples, 1))
        if len(batches) < 2:
            return mean, float("nan")
        return mean, float(batches.std(ddof=1) / np.sqrt(len(batches)))

    def result(self) -> dict:
        return {
            "samples": self.samples,
            "norm_pmf": self.pmf(self.norm_hist).tolist(),
            "block_pmf": self.pmf(self.block_hist).tolist(),
            "mean_size_mass": (self.mass_sums / max(self.samples, 1)).tolist(),
        }


class StoppingTimes(Observer):
    """Records each step at which the modified chain changes ``m_1..m_L``.

    Stores the step index, the transition class and the restricted state
    just before the move.  Class codes for a given ``L``: 0 new singleton,
    ``i`` (1 <= i < L) growth of an i-block, ``L`` an L-block leaving the
    first L sizes, ``L+i`` shrinkage of an i-block (1 <= i <= L), ``2L+1``
    an L-block entering from above.
    """

    needs_sigma = True

    def __init__(self, keep_times: bool = True):
        self.keep_times = keep_times
        self._times: list[np.ndarray] = []
        self._classes: list[np.ndarray] = []
        self._states: list[np.ndarray] = []

    def on_sigma(self, times, classes, states):
        if self.keep_times:
            self._times.append(times.copy())
        self._classes.append(classes.copy())
        self._states.append(states.copy())

    @property
    def times(self) -> np.ndarray:
        return np.concatenate(self._times) if self._times else np.zeros(0, np.int64)

    @property
    def classes(self) -> np.ndarray:
        return np.concatenate(self._classes) if self._classes else np.zeros(0, np.int64)

    @property
    def states(self) -> np.ndarray:
        if not self._states:
            return np.zeros((0, 0), np.int64)
        return np.concatenate(self._states)

    def result(self) -> dict:
        return {"events": int(len(self.classes))}


@dataclass
class Snapshot:
    step: int
    norm: int
    block_count: int
    state: AllelicPartition


@dataclass
class TrajectoryRecord:
    params: ChainParams
    kernel: str
    seed: int | None
    steps: int
    snapshots: list[Snapshot] = field(default_factory=list)
    sigma_times: np.ndarray | None = None
    L: int | None = None
    mu_L: float | None = None

    @property
    def final(self) -> AllelicPartition:
        return self.snapshots[-1].state

    def to_json(self) -> dict:
        return {
            "schema_version": TRACE_SCHEMA,
            "kernel": self.kernel,
            "params": self.params.to_json(),
            "L": self.L,
            "mu_L": self.mu_L,
            "seed": self.seed,
            "steps": self.steps,
            "snapshots": [
                {"step": s.step, "norm": s.norm, "block_count": s.block_count,
                 **s.state.to_json()}
                for s in self.snapshots
            ],
            "sigma_times": None if self.sigma_times is None else self.sigma_times.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def to_csv(self) -> str:
        width = max((s.state.max_size for s in self.snapshots), default=0)
        cols = ["step", "norm", "block_count"] + [f"m_{i}" for i in range(1, width + 1)]
        lines = [f"# {TRACE_SCHEMA} kernel={self.kernel} seed={self.seed}", ",".join(cols)]
        for s in self.snapshots:
            row = [s.step, s.norm, s.block_count] + s.state.dense(width)
            lines.append(",".join(str(v) for v in row))
        return "\n".join(lines) + "\n"


def _snapshot(chain: FastChain) -> Snapshot:
    return Snapshot(chain.step_count, int(chain.n), int(chain.K), chain.partition())


def simulate(params: ChainParams, kernel: str = "bdpu", steps: int = 0,
             observers=(), rng: np.random.Generator | None = None,
             seed: int | None = None, every: int | None = None,
             initial: AllelicPartition | None = None, L: int | None = None,
             mu_L: float | None = None, chunk: int = CHUNK) -> TrajectoryRecord:
    """Run one trajectory of ``steps`` moves from ``initial`` (default: origin).

    Snapshots are taken at step 0, every ``every`` steps and at the end.
    Observers receive per-chunk traces; see :class:`Observer`.
    """
    if steps < 0:
        raise ParameterError("steps must be >= 0")
    if rng is None:
        rng = np.random.default_rng(seed)
    chain = FastChain(params, kernel, initial, L, mu_L)
    observers = list(observers)
    trace = any(o.needs_trace for o in observers)
    n_sizes = max((o.track_sizes for o in observers), default=0)
    sigma_obs = [o for o in observers if o.needs_sigma]
    if sigma_obs and kernel != "modified":
        raise ParameterError("stopping times are defined for the modified kernel only")

    record = TrajectoryRecord(params, kernel, seed, steps, [_snapshot(chain)],
                              L=chain.L if kernel != "bdpu" else None,
                              mu_L=mu_L if kernel == "modified" else None)
    sigma_times = []
    done = 0
    while done < steps:
        size = min(chunk, steps - done)
        if every:
            size = min(size, every - done % every)
        u = rng.random(size)
        if trace:
            tn = np.empty(size, np.int64)
            tk = np.empty(size, np.int64)
            ts = np.empty((n_sizes, size), np.int64)
        else:
            tn, tk, ts = _EMPTY_I64, _EMPTY_I64, _EMPTY_I64_2D
        sigma = None
        if sigma_obs:
            sigma = (np.empty(size, np.int64), np.empty(size, np.int64),
                     np.empty((size, chain.L), np.int64))
        nsig = chain.advance(u, tn, tk, ts, sigma)
        if trace:
            for o in observers:
                if o.needs_trace:
                    o.on_chunk(done, tn, tk, ts[: o.track_sizes])
        if sigma_obs:
            for o in sigma_obs:
                o.on_sigma(sigma[0][:nsig], sigma[1][:nsig], sigma[2][:nsig])
            sigma_times.append(sigma[0][:nsig].copy())
        done += size
        if every and done % every == 0 and done < steps:
            record.snapshots.append(_snapshot(chain))
    if steps > 0:
        record.snapshots.append(_snapshot(chain))
    if sigma_obs:
        record.sigma_times = np.concatenate(sigma_times) if sigma_times else np.zeros(0, np.int64)
    return record


@dataclass
class ReplicaResult:
    """Final statistics of independent replicas run to a common horizon."""

    horizon: int
    sizes: np.ndarray        # (replicas, k) final m_1..m_k
    norms: np.ndarray        # (replicas,)
    blocks: np.ndarray       # (replicas,)
    checkpoints: np.ndarray  # (c,) step indices
    blocks_at: np.ndarray    # (replicas, c) block counts at the checkpoints
    norms_at: np.ndarray     # (replicas, c)
    states: list[AllelicPartition] | None = None


def replica_seeds(seed: int | None, replicas: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(replicas)


def run_replicas(params: ChainParams, horizon: int, replicas: int,
                 seed: int | None = None, kernel: str = "bdpu", sizes: int = 5,
                 checkpoints=(), keep_states: bool = False,
                 L: int | None = None, mu_L: float | None = None) -> ReplicaResult:
    """Run independent replicas from the origin for ``horizon`` steps each.

    Replica ``r`` draws from ``default_rng(SeedSequence(seed).spawn(R)[r])``,
    so results do not depend on execution order.
    """
    cps = np.array(sorted({int(c) for c in checkpoints if 0 < c <= horizon}), np.int64)
    out_sizes = np.zeros((replicas, sizes), np.int64)
    norms = np.zeros(replicas, np.int64)
    blocks = np.zeros(replicas, np.int64)
    blocks_at = np.zeros((replicas, len(cps)), np.int64)
    norms_at = np.zeros((replicas, len(cps)), np.int64)
    states = [] if keep_states else None
    bounds = list(cps) + ([horizon] if not len(cps) or cps[-1] != horizon else [])
    for r, ss in enumerate(replica_seeds(seed, replicas)):
        rng = np.random.default_rng(ss)
        chain = FastChain(params, kernel, None, L, mu_L)
        done = 0
        c = 0
        for b in bounds:
            while done < b:
                size = min(CHUNK, b - done)
                chain.advance(rng.random(size))
                done += size
            if c < len(cps) and cps[c] == b:
                blocks_at[r, c] = chain.K
                norms_at[r, c] = chain.n
                c += 1
        out_sizes[r] = chain.first_counts(sizes)
        norms[r] = chain.n
        blocks[r] = chain.K
        if keep_states:
            states.append(chain.partition())
    return ReplicaResult(horizon, out_sizes, norms, blocks, cps, blocks_at, norms_at, states)
