"""Memoryless reading channels, pairwise output statistics and exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BoundUndefined,
    DivergenceUndefined,
    ExponentUndefined,
    InvalidArgument,
    ModelInvalid,
)
from .source_models import PMF_TOL, Pmf

GOLDEN_TOL = 1e-9
GOLDEN_MAX_ITER = 200
INFINITE = math.inf


@dataclass(frozen=True, eq=False)
class Channel:
    """Row ``x`` holds the output pmf ``P(y | x)``."""

    rows: np.ndarray

    def __post_init__(self):
        mat = np.array(self.rows, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ModelInvalid("channel must be a non-empty matrix")
        if not np.all(np.isfinite(mat)) or np.any(mat < 0):
            raise ModelInvalid("channel has negative or non-finite entries")
        if np.any(np.abs(mat.sum(axis=1) - 1) > PMF_TOL * mat.shape[1]):
            raise ModelInvalid("every channel row must sum to 1")
        mat.setflags(write=False)
        object.__setattr__(self, "rows", mat)
        k, m = mat.shape
        object.__setattr__(self, "_identity", k == m and bool(np.array_equal(mat, np.eye(k))))
        object.__setattr__(self, "_cdf", np.cumsum(mat, axis=1)[:, :-1])

    @property
    def input_size(self) -> int:
        return int(self.rows.shape[0])

    @property
    def output_size(self) -> int:
        return int(self.rows.shape[1])

    @property
    def is_identity(self) -> bool:
        return self._identity


def identity_channel(k: int = 2) -> Channel:
    return Channel(np.eye(k))


def symmetric_channel(k: int, flip: float) -> Channel:
    """Keeps a symbol w.p. ``1-flip`` and spreads ``flip`` evenly over the others."""
    if not 0 <= flip <= 1:
        raise ModelInvalid("flip probability must lie in [0, 1]")
    rows = np.full((k, k), flip / (k - 1))
    np.fill_diagonal(rows, 1 - flip)
    return Channel(rows)


def binary_symmetric_channel(flip: float) -> Channel:
    return symmetric_channel(2, flip)


def channel_to_dict(channel: Channel) -> dict:
    return {"rows": [[float(v) for v in row] for row in channel.rows]}


def channel_from_dict(doc: dict) -> Channel:
    if not isinstance(doc, dict) or set(doc) != {"rows"}:
        raise ModelInvalid("channel document must be an object with exactly the key 'rows'")
    return Channel(doc["rows"])


def apply_channel(channel: Channel, x_seq, rng: np.random.Generator) -> np.ndarray:
    """Pass every symbol independently through the channel."""
    x = np.asarray(x_seq)
    k = channel.input_size
    if x.ndim != 1 or (x.size and (not np.issubdtype(x.dtype, np.integer) or x.min() < 0 or x.max() >= k)):
        raise InvalidArgument(f"input symbols must be integers in [0, {k})")
    x = x.astype(np.int64, copy=False)
    if channel.is_identity:
        return x.copy()
    u = rng.random(x.size)
    # count thresholds passed; the last cdf column is dropped so rounding never overflows
    return (u[:, None] >= channel._cdf[x]).sum(axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class PairStats:
    """Statistics of two channel outputs of the same source letter.

    ``log_lambda`` holds ``ln lambda`` where ``excluded`` is False and NaN
    elsewhere; the mask, never the float, decides support membership.
    """

    p_y: np.ndarray
    p_yy: np.ndarray
    lambda_table: np.ndarray
    log_lambda: np.ndarray
    excluded: np.ndarray
    lambda_min: float
    lambda_max: float
    mutual_info: float
    mutual_info_nats: float
    sigma2: float
    m3: float
    log_base: float

    @property
    def output_size(self) -> int:
        return int(self.p_y.size)

    @property
    def product(self) -> np.ndarray:
        return np.outer(self.p_y, self.p_y)


def pair_statistics(source: Pmf | Sequence[float], channel: Channel) -> PairStats:
    """Joint law of ``(Y, Y~)`` sharing one letter, and its likelihood ratio."""
    pmf = source if isinstance(source, Pmf) else Pmf(source)
    if pmf.size != channel.input_size:
        raise InvalidArgument("source and channel alphabets differ")
    rows = channel.rows
    p_y = pmf.probs @ rows
    p_yy = np.einsum("x,xa,xb->ab", pmf.probs, rows, rows)
    p_yy = 0.5 * (p_yy + p_yy.T)
    product = np.outer(p_y, p_y)
    excluded = ~(p_yy > 0)
    lam = np.full(p_yy.shape, np.nan)
    lam[~excluded] = p_yy[~excluded] / product[~excluded]
    log_lam = np.full(p_yy.shape, np.nan)
    log_lam[~excluded] = np.log(p_yy[~excluded]) - np.log(product[~excluded])
    w = p_yy[~excluded]
    z = log_lam[~excluded]
    info = float((w * z).sum())
    sigma2 = float((w * (z - info) ** 2).sum())
    m3 = float((w * np.abs(z - info) ** 3).sum()) ** (1 / 3)
    base = math.log(pmf.size)
    for arr in (p_y, p_yy, lam, log_lam, excluded):
        arr.setflags(write=False)
    return PairStats(
        p_y=p_y,
        p_yy=p_yy,
        lambda_table=lam,
        log_lambda=log_lam,
        excluded=excluded,
        lambda_min=float(lam[~excluded].min()),
        lambda_max=max(1.0, float(lam[~excluded].max())),
        mutual_info=max(0.0, info) / base,
        mutual_info_nats=max(0.0, info),
        sigma2=sigma2,
        m3=m3,
        log_base=base,
    )


def _log_power_sum(p: np.ndarray, q: np.ndarray, order: float) -> float:
    """``ln sum p^order q^(1-order)`` over the support of ``p``."""
    mask = p > 0
    logs = order * np.log(p[mask]) + (1 - order) * np.log(q[mask])
    m = logs.max()
    return float(m + math.log(np.exp(logs - m).sum()))


def renyi_divergence(p, q, order: float, base: float = math.e) -> float:
    """Renyi divergence of order ``order`` between two pmfs on the same cells."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise InvalidArgument("pmfs must have the same shape")
    if np.any((p > 0) & (q <= 0)):
        raise DivergenceUndefined("p is not absolutely continuous with respect to q")
    mask = p > 0
    delta = order - 1
    if order == 1:
        value = float((p[mask] * (np.log(p[mask]) - np.log(q[mask]))).sum())
    elif abs(delta) < 0.5:
        # sum p (p/q)^delta = 1 + sum p expm1(delta ln(p/q)); avoids cancellation near order 1
        pm = p[mask] / p[mask].sum()
        ratio = np.log(pm) - np.log(q[mask])
        value = math.log1p(float((pm * np.expm1(delta * ratio)).sum())) / delta
    else:
        value = _log_power_sum(p, q, order) / (order - 1)
    return value / math.log(base)


def golden_section_min(
    func: Callable[[float], float], lo: float = 0.0, hi: float = 1.0,
    tol: float = GOLDEN_TOL, max_iter: int = GOLDEN_MAX_ITER,
) -> tuple[float, float]:
    """Minimize a unimodal function on ``[lo, hi]``; returns ``(argmin, min)``.

    The end points are compared too, so boundary optima are found exactly.
    """
    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = func(d)
    best = min(((fc, c), (fd, d), (func(lo), lo), (func(hi), hi)))
    return best[1], best[0]


class Exponent(NamedTuple):
    """An exponent in nats and base ``|X|`` units; ``inf`` marks the Infinite variant."""

    nats: float
    base_units: float
    argmax: float | None

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.nats)

    def to_dict(self) -> dict:
        if self.is_infinite:
            return {"value": "Infinite", "unit": "nats", "base_value": "Infinite"}
        return {"value": self.nats, "unit": "nats", "base_value": self.base_units, "nu": self.argmax}


def _tilted(stats: PairStats) -> Callable[[float], float]:
    p = stats.p_yy.ravel()
    q = stats.product.ravel()
    return lambda nu: _log_power_sum(p, q, nu)


def _require_information(stats: PairStats) -> None:
    if not stats.mutual_info_nats > 0:
        raise ExponentUndefined("detection impossible: I = 0")


class ChernoffExponents(NamedTuple):
    E_minus_0: Exponent
    E_plus: Exponent
    E_minus_t_of_1: Exponent

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self._asdict().items()}


def chernoff_exponents(stats: PairStats, n_ell: float, t: int) -> ChernoffExponents:
    """Large-deviation exponents of same-origin and independent log-ratio sums.

    With ``f(nu) = ln sum P^nu Q^(1-nu)`` over ``nu in [0, 1]``:
    the under-crossing exponent at zero is ``-min f``, the over-crossing
    exponent for independent outputs is ``-min f`` as well, and the
    threshold-``ln n_ell`` under-crossing exponent for ``t`` terms is
    ``max (nu-1) ln(n_ell)/t - f(nu)``.
    """
    _require_information(stats)
    if n_ell <= 0 or t < 1:
        raise InvalidArgument("n_ell must be positive and t at least 1")
    f = _tilted(stats)
    base = stats.log_base
    nu_min, f_min = golden_section_min(f)
    supported = stats.log_lambda[~stats.excluded]
    if supported.min() > 0:
        e_minus_0 = Exponent(INFINITE, INFINITE, None)
    else:
        e_minus_0 = Exponent(-f_min, -f_min / base, nu_min)
    e_plus = Exponent(-f_min, -f_min / base, nu_min)
    rate = math.log(n_ell) / t
    nu_t, g_min = golden_section_min(lambda nu: f(nu) - (nu - 1) * rate)
    e_t = Exponent(-g_min, -g_min / base, nu_t)
    return ChernoffExponents(e_minus_0, e_plus, e_t)


def _theta_objective(stats: PairStats, epsilon: float) -> Callable[[float], float]:
    f = _tilted(stats)
    base = stats.log_base

    def objective(nu: float) -> float:
        gap = 1 - nu
        if gap <= 0:
            return math.inf
        divergence = f(nu) / (nu - 1) / base
        if divergence <= 0:
            return math.inf
        return (gap + epsilon) / (gap * divergence)

    return objective


def theta_star(stats: PairStats, epsilon: float) -> float:
    """Smallest read-overlap scale (in base ``|X|``) whose crossing exponent reaches ``epsilon``.

    Minimizes ``(1 - nu + epsilon) / ((1 - nu) D_nu)`` over ``nu in [0, 1)``;
    tends to ``1 / I`` as ``epsilon`` shrinks.
    """
    _require_information(stats)
    if not 0 < epsilon < 1:
        raise InvalidArgument("epsilon must lie in (0, 1)")
    return golden_section_min(_theta_objective(stats, epsilon))[1]


def type1_mgf_bound(stats: PairStats, a: float) -> float:
    """Truncated-MGF bound ``2 (ln2/sqrt(2 pi) + 12 m3^3/sigma^2) e^-a / sigma`` (nats)."""
    if not stats.sigma2 > 0:
        raise BoundUndefined("log-likelihood ratio has zero variance")
    sigma = math.sqrt(stats.sigma2)
    lead = math.log(2) / math.sqrt(2 * math.pi) + 12 * stats.m3 ** 3 / stats.sigma2
    return 2 * lead / sigma * math.exp(-a)


def type1_tail_bound(stats: PairStats, a: float, t: int) -> float:
    """Bound on ``P[sum of t independent-origin log-ratios > a]``."""
    if t < 1:
        raise InvalidArgument("t must be at least 1")
    return type1_mgf_bound(stats, a) / math.sqrt(t)
