"""Finite-alphabet stationary sources: memoryless and first-order Markov.

All computations run in natural logarithms.  Public functions that report
entropies or log-probabilities convert to base ``|X|`` (the alphabet size),
so a uniform source has unit entropy rate regardless of alphabet size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .errors import InvalidArgument, ModelInvalid

PMF_TOL = 1e-12
STATIONARY_TOL = 1e-10
MAX_ALPHABET = 8


def _as_prob_vector(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ModelInvalid(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ModelInvalid(f"{what} has negative or non-finite entries")
    if abs(arr.sum() - 1.0) > PMF_TOL * max(1, arr.size):
        raise ModelInvalid(f"{what} sums to {arr.sum()!r}, expected 1")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability mass function over ``{0, ..., k-1}``."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_prob_vector(self.probs, "pmf"))

    @property
    def size(self) -> int:
        return int(self.probs.size)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    @property
    def p_min(self) -> float:
        """Smallest non-zero probability."""
        return float(self.probs[self.probs > 0].min())

    def log_probs(self) -> np.ndarray:
        """Natural-log probabilities, ``-inf`` off the support."""
        with np.errstate(divide="ignore"):
            return np.log(self.probs)

    def tolist(self) -> list[float]:
        return [float(p) for p in self.probs]


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return seen


def _period(adj: np.ndarray) -> int:
    """Period of a strongly connected digraph via BFS levels."""
    k = adj.shape[0]
    level = np.full(k, -1)
    level[0] = 0
    queue = [0]
    for u in queue:
        for v in np.flatnonzero(adj[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u, v in zip(*np.nonzero(adj)):
        g = math.gcd(g, int(abs(level[u] + 1 - level[v])))
    return g


@dataclass(frozen=True, eq=False)
class MarkovKernel:
    """Row-stochastic transition matrix of an irreducible aperiodic chain."""

    rows: np.ndarray
    pi: np.ndarray = field(init=False)

    def __post_init__(self):
        mat = np.array(self.rows, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
            raise ModelInvalid("kernel must be a non-empty square matrix")
        for i in range(mat.shape[0]):
            _as_prob_vector(mat[i], f"kernel row {i}")
        adj = mat > 0
        if not (_reachable(adj, 0).all() and _reachable(adj.T, 0).all()):
            raise ModelInvalid("kernel is reducible")
        if _period(adj) != 1:
            raise ModelInvalid("kernel is periodic")
        mat.setflags(write=False)
        object.__setattr__(self, "rows", mat)
        object.__setattr__(self, "pi", _solve_stationary(mat))

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    def log_rows(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.rows)

    def is_symmetric_form(self) -> float | None:
        """Return ``eps`` if the kernel is ``(1-(k-1)eps) I + eps (J - I)``."""
        k = self.size
        off = self.rows[~np.eye(k, dtype=bool)]
        if k < 2 or np.ptp(off) > 1e-15:
            return None
        eps = float(off[0])
        if np.max(np.abs(np.diag(self.rows) - (1 - (k - 1) * eps))) > 1e-12:
            return None
        return eps


def _solve_stationary(mat: np.ndarray) -> np.ndarray:
    k = mat.shape[0]
    system = np.vstack([mat.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    # a few power steps polish the least-squares residual
    for _ in range(1000):
        nxt = pi @ mat
        done = np.abs(nxt - pi).max() < PMF_TOL
        pi = nxt / nxt.sum()
        if done:
            break
    if np.abs(pi @ mat - pi).max() > STATIONARY_TOL:
        raise ModelInvalid("stationary distribution did not converge")
    pi.setflags(write=False)
    return pi


class SourceModel:
    """Common interface of stationary sources over ``{0, ..., k-1}``."""

    alphabet_size: int

    def initial_pmf(self) -> np.ndarray:
        raise NotImplementedError

    def transition_matrix(self) -> np.ndarray:
        """Transition rows; memoryless sources repeat the pmf in every row."""
        raise NotImplementedError

    def log_initial(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.initial_pmf())

    def log_transition(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.transition_matrix())

    @property
    def log_base(self) -> float:
        return math.log(self.alphabet_size)


class Memoryless(SourceModel):
    """I.i.d. source with a fixed pmf."""

    def __init__(self, pmf: Pmf | Sequence[float]):
        self.pmf = pmf if isinstance(pmf, Pmf) else Pmf(pmf)
        self.alphabet_size = self.pmf.size
        if not 2 <= self.alphabet_size <= MAX_ALPHABET:
            raise ModelInvalid(f"alphabet size must be in [2, {MAX_ALPHABET}]")

    def initial_pmf(self) -> np.ndarray:
        return self.pmf.probs

    def transition_matrix(self) -> np.ndarray:
        return np.tile(self.pmf.probs, (self.alphabet_size, 1))

    def __repr__(self):
        return f"Memoryless({self.pmf.tolist()})"


class Markov(SourceModel):
    """Stationary first-order Markov source started from its stationary pmf."""

    def __init__(self, kernel: MarkovKernel | Sequence[Sequence[float]]):
        self.kernel = kernel if isinstance(kernel, MarkovKernel) else MarkovKernel(kernel)
        self.alphabet_size = self.kernel.size
        if not 2 <= self.alphabet_size <= MAX_ALPHABET:
            raise ModelInvalid(f"alphabet size must be in [2, {MAX_ALPHABET}]")

    def initial_pmf(self) -> np.ndarray:
        return self.kernel.pi

    def transition_matrix(self) -> np.ndarray:
        return self.kernel.rows

    def __repr__(self):
        return f"Markov({self.kernel.rows.tolist()})"


def uniform(k: int = 2) -> Memoryless:
    return Memoryless(np.full(k, 1.0 / k))


def symmetric_kernel(k: int, eps: float) -> MarkovKernel:
    """Kernel staying put w.p. ``1-(k-1)eps`` and moving to each other letter w.p. ``eps``."""
    if not 0 < eps < 1 / (k - 1):
        raise ModelInvalid("eps must lie in (0, 1/(k-1))")
    rows = np.full((k, k), eps)
    np.fill_diagonal(rows, 1 - (k - 1) * eps)
    return MarkovKernel(rows)


def _check_symbols(seq, k: int) -> np.ndarray:
    arr = np.asarray(seq)
    if arr.ndim != 1:
        raise InvalidArgument("symbol sequence must be one-dimensional")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= k):
        raise InvalidArgument(f"symbols must be integers in [0, {k})")
    return arr.astype(np.int64, copy=False)


# -- sampling -----------------------------------------------------------------


@njit(cache=True)
def _walk(cdf, first, uniforms):
    out = np.empty(uniforms.size + 1, dtype=np.int64)
    out[0] = first
    k = cdf.shape[1]
    for i in range(uniforms.size):
        row = cdf[out[i]]
        u = uniforms[i]
        j = 0
        while j < k - 1 and u >= row[j]:
            j += 1
        out[i + 1] = j
    return out


def sample_sequence(model: SourceModel, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``length`` consecutive symbols of the stationary process."""
    if length < 1:
        raise InvalidArgument("length must be at least 1")
    k = model.alphabet_size
    if isinstance(model, Memoryless):
        cdf = np.cumsum(model.pmf.probs)
        # clip guards against the cdf ending just below 1
        return np.minimum(np.searchsorted(cdf, rng.random(length), side="right"), k - 1).astype(np.int64)
    first = rng.choice(k, p=model.initial_pmf())
    cdf = np.cumsum(model.transition_matrix(), axis=1)
    return _walk(cdf, first, rng.random(length - 1))


# -- scoring ------------------------------------------------------------------


def log_prob_nats(model: SourceModel, seq, past_context=None) -> float:
    """Natural-log probability of ``seq``, optionally given preceding symbols."""
    k = model.alphabet_size
    arr = _check_symbols(seq, k)
    if arr.size == 0:
        raise InvalidArgument("sequence must be non-empty")
    logk = model.log_transition()
    if past_context is not None and len(past_context) > 0:
        ctx = _check_symbols(past_context, k)
        first = logk[ctx[-1], arr[0]]
    else:
        first = model.log_initial()[arr[0]]
    return float(first + logk[arr[:-1], arr[1:]].sum())


def log_prob(model: SourceModel, seq, past_context=None) -> float:
    """Log-probability of ``seq`` in base ``|X|``; ``-inf`` when impossible."""
    return log_prob_nats(model, seq, past_context) / model.log_base


# -- information measures -----------------------------------------------------


def _entropy_nats(p: np.ndarray) -> float:
    q = p[p > 0]
    return float(-(q * np.log(q)).sum())


def _renyi_nats(p: np.ndarray, order: float) -> float:
    q = p[p > 0]
    if order == 1:
        return _entropy_nats(p)
    if order == -math.inf:
        return float(-math.log(q.min()))
    if order == math.inf:
        return float(-math.log(q.max()))
    if order == 0:
        return math.log(q.size)
    delta = order - 1
    if abs(delta) < 0.5:
        # sum q^order = 1 + sum q expm1(delta ln q); avoids cancellation near order 1
        q = q / q.sum()
        return float(-math.log1p(float((q * np.expm1(delta * np.log(q))).sum())) / delta)
    # log-sum-exp keeps extreme orders finite
    logs = order * np.log(q)
    m = logs.max()
    return float((m + math.log(np.exp(logs - m).sum())) / (1 - order))


def stationary_distribution(kernel: MarkovKernel) -> Pmf:
    return Pmf(kernel.pi)


def entropy_rate(model: SourceModel) -> float:
    """Shannon entropy rate in base ``|X|``."""
    if isinstance(model, Memoryless):
        h = _entropy_nats(model.pmf.probs)
    else:
        rows = model.transition_matrix()
        h = sum(pi_x * _entropy_nats(rows[x]) for x, pi_x in enumerate(model.initial_pmf()))
    return h / model.log_base


class RenyiRate(NamedTuple):
    value: float
    approximate: bool
    block_length: int | None


def default_block_length(k: int) -> int:
    """Largest block length whose enumeration stays near 4096 blocks."""
    return max(1, int(math.floor(12 * math.log(2) / math.log(k) + 1e-9)))


def block_pmf(model: SourceModel, m: int) -> np.ndarray:
    """Joint pmf of the first ``m`` symbols, flattened in lexicographic order."""
    probs = model.initial_pmf().copy()
    trans = model.transition_matrix()
    k = model.alphabet_size
    for _ in range(m - 1):
        last = np.arange(probs.size) % k
        probs = (probs[:, None] * trans[last]).ravel()
    return probs


def _cycle_mean_extreme(weights: np.ndarray, mask: np.ndarray, maximize: bool) -> float:
    """Karp's algorithm for the extreme mean-weight cycle of a digraph."""
    k = weights.shape[0]
    sign = 1.0 if maximize else -1.0
    w = np.where(mask, sign * weights, -np.inf)
    walks = np.full((k + 1, k), -np.inf)
    walks[0] = 0.0
    for step in range(1, k + 1):
        walks[step] = np.max(walks[step - 1][:, None] + w, axis=0)
    best = -np.inf
    for v in range(k):
        if not np.isfinite(walks[k, v]):
            continue
        worst = math.inf
        for step in range(k):
            if np.isfinite(walks[step, v]):
                worst = min(worst, (walks[k, v] - walks[step, v]) / (k - step))
        best = max(best, worst)
    if not np.isfinite(best):
        raise ModelInvalid("support graph has no cycle")
    return sign * best


def max_mean_cycle(weights, mask=None) -> float:
    """Maximum mean edge weight over the cycles of a digraph."""
    weights = np.asarray(weights, dtype=np.float64)
    mask = np.isfinite(weights) if mask is None else np.asarray(mask, dtype=bool)
    return _cycle_mean_extreme(np.where(mask, weights, 0.0), mask, maximize=True)


def renyi_entropy_rate(
    model: SourceModel, order: float, block_length: int | None = None
) -> RenyiRate:
    """Order-``order`` Renyi entropy rate in base ``|X|``.

    Markov sources with finite ``order`` other than 1 are approximated by the
    normalized block entropy of length ``block_length`` and flagged.
    """
    if math.isnan(order):
        raise InvalidArgument("order must not be NaN")
    base = model.log_base
    if order == 1:
        return RenyiRate(entropy_rate(model), False, None)
    if isinstance(model, Memoryless):
        return RenyiRate(_renyi_nats(model.pmf.probs, order) / base, False, None)
    rows = model.transition_matrix()
    if math.isinf(order):
        mask = rows > 0
        with np.errstate(divide="ignore"):
            surprisal = -np.log(rows)
        value = _cycle_mean_extreme(np.where(mask, surprisal, 0.0), mask, maximize=order < 0)
        return RenyiRate(value / base, False, None)
    m = default_block_length(model.alphabet_size) if block_length is None else int(block_length)
    if m < 1:
        raise InvalidArgument("block_length must be positive")
    return RenyiRate(_renyi_nats(block_pmf(model, m), order) / (m * base), True, m)


def block_surprisal_bounds(model: SourceModel, max_t: int) -> np.ndarray:
    """``out[t]`` is the largest ``-ln P(x_1^t)`` over the support, for ``t <= max_t``."""
    out = np.zeros(max_t + 1)
    if max_t == 0:
        return out
    log_init = model.log_initial()
    log_rows = model.log_transition()
    # best[x]: largest surprisal of a length-t block ending in x
    best = np.where(np.isfinite(log_init), -log_init, -np.inf)
    out[1] = best.max()
    trans = np.where(np.isfinite(log_rows), -log_rows, -np.inf)
    for t in range(2, max_t + 1):
        best = np.max(best[:, None] + trans, axis=0)
        out[t] = best.max()
    return out


def mixing_coefficient_bound(kernel: MarkovKernel, s: int) -> float:
    """Worst-case total variation between the ``s``-step law and ``pi``."""
    if s < 1:
        raise InvalidArgument("s must be at least 1")
    eps = kernel.is_symmetric_form()
    k = kernel.size
    if eps is not None:
        return (k - 1) / k * abs(1 - k * eps) ** s
    power = np.linalg.matrix_power(kernel.rows, s)
    return float(0.5 * np.abs(power - kernel.pi[None, :]).sum(axis=1).max())


def recurrence_probability(model: SourceModel, s: int) -> float:
    """``P[X_1 = X_{1+s}]`` for the stationary process."""
    if s < 1:
        raise InvalidArgument("s must be at least 1")
    if isinstance(model, Memoryless):
        return float((model.pmf.probs ** 2).sum())
    power = np.linalg.matrix_power(model.transition_matrix(), s)
    return float(model.initial_pmf() @ np.diag(power))


# -- serialization ------------------------------------------------------------


def model_to_dict(model: SourceModel) -> dict:
    if isinstance(model, Memoryless):
        return {"alphabet": model.alphabet_size, "type": "memoryless", "probs": model.pmf.tolist()}
    return {
        "alphabet": model.alphabet_size,
        "type": "markov",
        "kernel": [[float(v) for v in row] for row in model.transition_matrix()],
    }


def model_from_dict(doc: dict) -> SourceModel:
    if not isinstance(doc, dict):
        raise ModelInvalid("model document must be an object")
    kind = doc.get("type")
    extra = set(doc) - {"alphabet", "type", "probs" if kind == "memoryless" else "kernel"}
    if extra:
        raise ModelInvalid(f"unknown model keys: {sorted(extra)}")
    if kind == "memoryless":
        model: SourceModel = Memoryless(doc.get("probs", []))
    elif kind == "markov":
        model = Markov(doc.get("kernel", []))
    else:
        raise ModelInvalid(f"unknown model type {kind!r}")
    if "alphabet" in doc and doc["alphabet"] != model.alphabet_size:
        raise ModelInvalid("alphabet does not match the probability table")
    return model
