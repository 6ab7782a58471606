"""Spatio-temporal Gaussian copula: estimation and scenario generation.

Cells of a ``D x H`` forecast are vectorized location-major: cell
``(i, tau)`` is row ``i * H + tau`` of the copula, so a sampled vector of
length ``d = D * H`` reshapes to ``D x H`` with plain C-order ``reshape``.

Random streams are counter-based (numpy's Philox): the key is derived from
``(seed, stream tag)`` and the scenario index selects a disjoint block of the
counter space, so scenario ``s`` draws the same numbers no matter how the
index range is split across workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    DimensionMismatch,
    DomainError,
    MissingMarginal,
    NotPositiveDefinite,
    ZeroVarianceRow,
)

logger = logging.getLogger(__name__)

PIT_CLAMP = 1e-6
EIG_FLOOR = 1e-8
JITTER_START = 1e-10
JITTER_MAX = 1e-2

# stream tags keep the uniform (marginal-only) and Gaussian draws apart
_TAG_NORMAL = 1
_TAG_UNIFORM = 2
_TAG_JOINT_CDF = 3


def std_normal_cdf(x):
    return ndtr(x)


def std_normal_inv(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(np.isnan(u)):
        raise DomainError("standard normal quantile needs u strictly inside (0, 1)")
    out = ndtri(u)
    return out[()] if out.ndim == 0 else out


def cell_index(i, tau, horizon):
    """Row of cell (location ``i``, step ``tau``) in the location-major layout."""
    return i * horizon + tau


@dataclass(frozen=True)
class PitMatrix:
    """``d x N`` Gaussianized PIT values; column ``n`` is window ``n``."""

    values: np.ndarray
    n_series: int
    horizon: int
    ks_statistic: np.ndarray | None = None

    @property
    def d(self):
        return self.values.shape[0]


def pit_transform(targets, marginals, clamp: float = PIT_CLAMP) -> PitMatrix:
    """Map realized targets through their marginals, then through the normal quantile.

    ``targets`` is ``(N, D, H)``; ``marginals`` a batched CDF whose batch
    shape is ``(N, D, H)``. PIT values are clamped to ``[clamp, 1 - clamp]``
    so every ``v`` is finite.
    """
    from scipy.stats import kstest

    z = np.asarray(targets, dtype=float)
    if z.ndim != 3:
        raise DimensionMismatch(f"targets must be (N, D, H), got {z.shape}")
    if marginals is None or tuple(marginals.batch_shape) != z.shape:
        got = None if marginals is None else tuple(marginals.batch_shape)
        raise MissingMarginal(f"need one marginal per (window, location, step) {z.shape}, got {got}")
    u = np.clip(marginals.cdf(z), clamp, 1.0 - clamp)
    v = ndtri(u)
    N, D, H = z.shape
    V = v.reshape(N, D * H).T.copy()
    ks = np.array([kstest(row, "norm").statistic for row in V]) if N >= 2 else None
    return PitMatrix(V, D, H, ks)


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    min_eigenvalue: float
    jitter: float = 0.0
    eigen_clipped: bool = False
    shrinkage: float = 0.0
    n_samples: int = 0

    @property
    def d(self):
        return self.values.shape[0]

    def metadata(self) -> dict:
        return {
            "d": int(self.d),
            "min_eigenvalue_before_repair": float(self.min_eigenvalue),
            "eigen_clipped": bool(self.eigen_clipped),
            "jitter": float(self.jitter),
            "shrinkage": float(self.shrinkage),
            "n_samples": int(self.n_samples),
        }


def _unit_diagonal(R):
    s = np.sqrt(np.diag(R))
    R = R / s[:, None] / s[None, :]
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def repair_correlation(R, floor: float = EIG_FLOOR):
    """Clip eigenvalues at ``floor`` and restore the unit diagonal.

    Returns ``(R_repaired, min_eigenvalue_before, clipped)``. A matrix that
    already clears the floor is returned unchanged.
    """
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    w, Q = np.linalg.eigh(R)
    lam_min = float(w[0])
    if lam_min >= floor:
        return R, lam_min, False
    # renormalizing the diagonal shrinks eigenvalues slightly, so clip with headroom
    for _ in range(50):
        R = _unit_diagonal((Q * np.maximum(w, 2 * floor)) @ Q.T)
        w, Q = np.linalg.eigh(R)
        if w[0] >= floor:
            break
    return R, lam_min, True


def estimate_correlation(V, shrinkage: float = 0.0) -> CorrelationMatrix:
    """Pearson correlation of the rows of ``V`` with positive-definite repair.

    ``shrinkage`` blends toward the identity, ``(1 - s) R + s I``, before
    the repair; the default of zero leaves the Pearson estimate untouched.
    """
    pit = V if isinstance(V, PitMatrix) else None
    X = np.asarray(pit.values if pit is not None else V, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise DimensionMismatch(f"need a d x N matrix with N >= 2 columns, got {X.shape}")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    Xc = X - X.mean(axis=1, keepdims=True)
    ss = np.einsum("ij,ij->i", Xc, Xc)
    zero = np.flatnonzero(ss <= 1e-12 * X.shape[1] * max(1.0, float(np.max(np.abs(X)))) ** 2)
    if zero.size:
        r = int(zero[0])
        H = pit.horizon if pit is not None else 1
        raise ZeroVarianceRow(r, r // H, r % H)
    Xn = Xc / np.sqrt(ss)[:, None]
    R = Xn @ Xn.T
    R = np.clip(0.5 * (R + R.T), -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    if shrinkage:
        R = (1.0 - shrinkage) * R + shrinkage * np.eye(R.shape[0])
    R, lam_min, clipped = repair_correlation(R)
    return CorrelationMatrix(R, lam_min, 0.0, clipped, float(shrinkage), X.shape[1])


@dataclass(frozen=True)
class GaussianCopula:
    correlation: CorrelationMatrix
    cholesky: np.ndarray

    @property
    def d(self):
        return self.cholesky.shape[0]


def make_copula(R) -> GaussianCopula:
    """Cholesky-factor a correlation matrix, adding diagonal jitter only if needed.

    Jitter starts at ``1e-10`` and doubles until the factorization succeeds;
    the jittered matrix is renormalized to a unit diagonal and the jitter is
    recorded. Beyond ``1e-2`` the matrix is rejected.
    """
    if not isinstance(R, CorrelationMatrix):
        R = np.asarray(R, dtype=float)
        w = np.linalg.eigvalsh(R)
        R = CorrelationMatrix(R, float(w[0]), n_samples=0)
    M = R.values
    try:
        L = np.linalg.cholesky(M)
        return GaussianCopula(R, L)
    except np.linalg.LinAlgError:
        pass
    delta = JITTER_START
    eye = np.eye(M.shape[0])
    while delta <= JITTER_MAX:
        Mj = _unit_diagonal(M + delta * eye)
        try:
            L = np.linalg.cholesky(Mj)
        except np.linalg.LinAlgError:
            delta *= 2
            continue
        logger.info("Cholesky needed jitter %.3g", delta)
        fixed = CorrelationMatrix(
            Mj, R.min_eigenvalue, delta, R.eigen_clipped, R.shrinkage, R.n_samples
        )
        return GaussianCopula(fixed, L)
    raise NotPositiveDefinite(f"correlation matrix not positive definite even with jitter {JITTER_MAX}")


def _stream(seed: int, tag: int, index: int) -> np.random.Generator:
    """Generator for scenario ``index``: key ``(seed, tag)``, counter block ``index``."""
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | (int(tag) << 64)
    counter = [0, 0, 0, int(index)]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _map_chunks(fn, start, count, workers):
    if workers is None or workers <= 1 or count < 2:
        return [fn(start + s) for s in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(start, start + count)))


def sample_mvn(copula: GaussianCopula, n_samples: int, seed: int, start: int = 0, workers: int | None = None):
    """Draw ``v = L g`` for scenario indices ``start, ..., start + n_samples - 1``.

    Returns an ``(n_samples, d)`` array. Each row depends only on
    ``(seed, scenario index)``.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    L = copula.cholesky
    d = L.shape[0]

    def one(s):
        g = _stream(seed, _TAG_NORMAL, s).standard_normal(d)
        return L @ g

    return np.stack(_map_chunks(one, start, n_samples, workers))


def sample_uniform(d: int, n_samples: int, seed: int, start: int = 0):
    return np.stack([_stream(seed, _TAG_UNIFORM, s).random(d) for s in range(start, start + n_samples)])


MARGINAL_ONLY = "marginal"
COPULA = "copula"


@dataclass(frozen=True)
class ScenarioSet:
    """``S`` scenarios of shape ``D x H`` for one forecast origin."""

    values: np.ndarray
    origin: int
    mode: str
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] < 1:
            raise DimensionMismatch(f"scenario values must be (S, D, H) with S >= 1, got {self.values.shape}")
        if self.mode not in (MARGINAL_ONLY, COPULA):
            raise ValueError(f"unknown scenario mode {self.mode!r}")

    @property
    def n_scenarios(self):
        return self.values.shape[0]


def generate_scenarios(
    copula: GaussianCopula | None,
    marginals,
    n_scenarios: int,
    seed: int,
    origin: int = 0,
    workers: int | None = None,
) -> ScenarioSet:
    """Sample joint scenarios from marginals coupled by ``copula``.

    With a copula, ``u = Phi(L g)`` per scenario; without one (the
    marginal-only baseline) every cell draws an independent uniform. In both
    modes ``z = F^{-1}(u)`` cell by cell. ``marginals`` is a batched CDF of
    batch shape ``(D, H)``.
    """
    shape = tuple(marginals.batch_shape)
    if len(shape) != 2:
        raise DimensionMismatch(f"marginal grid must be D x H, got batch shape {shape}")
    D, H = shape
    if copula is None:
        u = sample_uniform(D * H, n_scenarios, seed)
        mode = MARGINAL_ONLY
    else:
        if copula.d != D * H:
            raise DimensionMismatch(f"copula dimension {copula.d} != D*H = {D}*{H}")
        u = ndtr(sample_mvn(copula, n_scenarios, seed, workers=workers))
        mode = COPULA
    z = marginals.inverse(u.reshape(n_scenarios, D, H))
    return ScenarioSet(np.asarray(z, dtype=float), origin, mode, seed)


def copula_joint_cdf(copula: GaussianCopula, marginals, z, mc_samples: int = 10_000, seed: int = 0):
    """Monte-Carlo estimate of the joint CDF at the ``D x H`` point ``z``.

    Counts the MVN draws that are componentwise below ``Phi^{-1}(F(z))``.
    Returns ``(probability, standard_error)``.
    """
    if mc_samples < 1000:
        raise ValueError("mc_samples must be at least 1000")
    z = np.asarray(z, dtype=float)
    if tuple(marginals.batch_shape) != z.shape or z.size != copula.d:
        raise DimensionMismatch("point, marginal grid and copula dimensions disagree")
    u = np.asarray(marginals.cdf(z), dtype=float).ravel()
    with np.errstate(divide="ignore"):
        thresh = ndtri(u)  # u = 1 gives +inf, so that coordinate never binds
    rng = _stream(seed, _TAG_JOINT_CDF, 0)
    g = rng.standard_normal((mc_samples, copula.d))
    v = g @ copula.cholesky.T
    hits = np.all(v <= thresh[None, :], axis=1)
    p = float(hits.mean())
    se = float(np.sqrt(max(p * (1 - p), 0.0) / mc_samples))
    return p, se
