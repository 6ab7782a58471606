"""Beta marginals: regularized incomplete beta function and maximum likelihood.

The incomplete beta function is evaluated with the modified Lentz algorithm
on the classic continued fraction, vectorized with a per-element convergence
mask. ``gammaln``/``digamma`` come from scipy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from ..errors import DegenerateSamples, DidNotConverge

logger = logging.getLogger(__name__)

_TINY = 1e-300
_CF_EPS = 1e-16
_CF_MAX_ITER = 10_000
SAMPLE_CLAMP = 1e-6


def _betacf(a, b, x):
    """Continued fraction for I_x(a, b); arrays of equal shape, x < (a+1)/(a+b+2)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) >= _CF_EPS
        if not active.any():
            return h
    logger.warning("incomplete beta continued fraction hit %d iterations", _CF_MAX_ITER)
    return h


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b), broadcasting."""
    a, b, x = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    )
    out = np.empty(x.shape)
    lo = x <= 0.0
    hi = x >= 1.0
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    if mid.any():
        am, bm, xm = a[mid], b[mid], x[mid]
        log_front = (
            gammaln(am + bm) - gammaln(am) - gammaln(bm)
            + am * np.log(xm) + bm * np.log1p(-xm)
        )
        front = np.exp(log_front)
        direct = xm < (am + 1.0) / (am + bm + 2.0)
        res = np.empty(xm.shape)
        if direct.any():
            res[direct] = front[direct] * _betacf(am[direct], bm[direct], xm[direct]) / am[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - front[flip] * _betacf(bm[flip], am[flip], 1.0 - xm[flip]) / bm[flip]
        out[mid] = np.clip(res, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def beta_logpdf(a, b, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (
            (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)
            - (gammaln(a) + gammaln(b) - gammaln(a + b))
        )


def betaincinv(a, b, u, tol=1e-12, max_iter=200):
    """Inverse of :func:`betainc` in ``x`` by safeguarded Newton on a bracket.

    Every element keeps a bracket ``[lo, hi]`` with ``I_lo <= u <= I_hi``;
    Newton steps that leave the bracket fall back to bisection, so the
    result is accurate to ``tol`` in ``x``.
    """
    a, b, u = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(u, dtype=float)
    )
    shape = u.shape
    a, b, u = a.ravel(), b.ravel(), u.ravel()
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    # start at the mean, a reasonable interior point for every (a, b)
    x = a / (a + b)
    x = np.where(u <= 0.0, 0.0, np.where(u >= 1.0, 1.0, x))
    active = (u > 0.0) & (u < 1.0)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[idx]
        f = betainc(a[idx], b[idx], xa) - u[idx]
        below = f < 0
        lo[idx] = np.where(below, xa, lo[idx])
        hi[idx] = np.where(below, hi[idx], xa)
        pdf = np.exp(beta_logpdf(a[idx], b[idx], xa))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = xa - f / pdf
        bisect = 0.5 * (lo[idx] + hi[idx])
        ok = np.isfinite(step) & (step >= lo[idx]) & (step <= hi[idx])
        new = np.where(f == 0, xa, np.where(ok, step, bisect))
        x[idx] = new
        done = (np.abs(new - xa) <= tol) | (hi[idx] - lo[idx] <= tol) | (f == 0)
        active[idx[done]] = False
    return x.reshape(shape)[()] if len(shape) == 0 else x.reshape(shape)


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float
    converged: bool = True
    n_iter: int = 0
    loglik: float = float("nan")

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")


def method_of_moments(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    m = x.mean()
    v = x.var()
    if v <= 0:
        raise DegenerateSamples("samples have zero variance; Beta moments undefined")
    common = m * (1 - m) / v - 1.0
    if common <= 0:
        # variance too large for any Beta with this mean
        return 1.0, 1.0
    return m * common, (1 - m) * common


def _mean_loglik(a, b, mlog, mlog1m):
    return (a - 1) * mlog + (b - 1) * mlog1m - (gammaln(a) + gammaln(b) - gammaln(a + b))


def fit_beta_mle(samples, max_iter: int = 500, tol: float = 1e-8, strict: bool = False) -> BetaParams:
    """Beta maximum likelihood by gradient ascent on (log alpha, log beta).

    Samples are clamped to ``[1e-6, 1 - 1e-6]`` so observed 0/1 capacity
    factors keep the likelihood finite. The ascent starts from the method of
    moments; each step follows the gradient preconditioned by the Fisher
    information (the Beta family is exponential, so this is Fisher scoring)
    with Armijo backtracking. Convergence means the infinity-norm of the mean
    log-likelihood gradient in log-parameter space is below ``tol``.

    If ``max_iter`` is exhausted the best iterate is returned with
    ``converged=False``, or :class:`DidNotConverge` is raised when ``strict``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSamples(f"need at least 2 samples, got {x.size}")
    x = np.clip(x, SAMPLE_CLAMP, 1.0 - SAMPLE_CLAMP)
    a, b = method_of_moments(x)
    mlog = np.log(x).mean()
    mlog1m = np.log1p(-x).mean()

    theta = np.log([a, b])
    ll = _mean_loglik(a, b, mlog, mlog1m)
    for it in range(max_iter):
        a, b = np.exp(theta)
        psi_ab = digamma(a + b)
        grad = np.array([a * (mlog - digamma(a) + psi_ab), b * (mlog1m - digamma(b) + psi_ab)])
        if np.max(np.abs(grad)) < tol:
            return BetaParams(float(a), float(b), True, it, float(ll))
        t_ab = polygamma(1, a + b)
        fisher = np.array([[polygamma(1, a) - t_ab, -t_ab], [-t_ab, polygamma(1, b) - t_ab]])
        fisher *= np.outer([a, b], [a, b])
        direction = np.linalg.solve(fisher, grad)
        slope = grad @ direction
        step = 1.0
        while True:
            cand = theta + step * direction
            cll = _mean_loglik(*np.exp(cand), mlog, mlog1m)
            if np.isfinite(cll) and cll >= ll + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-12:
                # no ascent possible at float precision: this is the optimum
                return BetaParams(float(a), float(b), np.max(np.abs(grad)) < 1e2 * tol, it, float(ll))
        if np.max(np.abs(cand - theta)) < 1e-14:
            # stationary at float precision; the gradient floor is numerical noise
            a, b = np.exp(cand)
            return BetaParams(float(a), float(b), np.max(np.abs(grad)) < 1e2 * tol, it + 1, float(cll))
        theta, ll = cand, cll
    a, b = np.exp(theta)
    if strict:
        raise DidNotConverge(f"Beta MLE did not converge in {max_iter} iterations", (a, b))
    logger.warning("Beta MLE did not converge in %d iterations", max_iter)
    return BetaParams(float(a), float(b), False, max_iter, float(ll))


def fit_beta_grid(samples, **kwargs):
    """Fit one Beta per trailing cell of ``samples`` with shape ``(N, ...)``.

    Returns ``(alpha, beta, converged)`` arrays shaped like ``samples[0]``.
    """
    samples = np.asarray(samples, dtype=float)
    cells = samples.reshape(samples.shape[0], -1)
    fits = [fit_beta_mle(cells[:, j], **kwargs) for j in range(cells.shape[1])]
    shape = samples.shape[1:]
    return (
        np.array([f.alpha for f in fits]).reshape(shape),
        np.array([f.beta for f in fits]).reshape(shape),
        np.array([f.converged for f in fits]).reshape(shape),
    )
