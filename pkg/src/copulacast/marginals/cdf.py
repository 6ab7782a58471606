"""Invertible marginal CDFs.

Both CDF kinds are *batched*: parameters carry a leading batch shape (for
example ``(D, H)`` for one forecast origin, or ``(N, D, H)`` for a set of
training windows) and evaluation broadcasts against it. A single marginal is
the batch shape ``()`` case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, OutOfSupport, UnsortedQuantiles
from .beta import betainc, betaincinv

SPREAD = 1e-9


def _spread_knots(z, eps):
    """Make interior knots strictly increasing between the end knots.

    Duplicates are pushed apart by ``eps``: a forward pass anchored at the
    lower end then a backward pass anchored at the upper end. A zero-width
    support leaves every knot at the single support point.
    """
    z = z.copy()
    K = z.shape[-1]
    for k in range(1, K - 1):
        z[..., k] = np.maximum(z[..., k], z[..., k - 1] + eps)
    for k in range(K - 2, 0, -1):
        z[..., k] = np.minimum(z[..., k], z[..., k + 1] - eps)
    return z


@dataclass(frozen=True)
class QuantileCdf:
    """Piecewise-linear CDF through ``(lo, 0), (z_q, q)..., (hi, 1)``.

    ``knots`` has shape ``batch + (Q + 2,)``; ``levels`` is the shared
    u-grid ``(0, q_1, ..., q_Q, 1)``.
    """

    knots: np.ndarray
    levels: np.ndarray

    kind = "quantile"

    @property
    def batch_shape(self):
        return self.knots.shape[:-1]

    @property
    def lower(self):
        return self.knots[..., 0]

    @property
    def upper(self):
        return self.knots[..., -1]

    def __getitem__(self, index):
        return QuantileCdf(self.knots[index], self.levels)

    def cdf(self, z):
        """F(z), defined on the whole real line (0 below ``lo``, 1 from the top knot on)."""
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(z.shape, self.batch_shape)
        knots = np.broadcast_to(self.knots, shape + self.knots.shape[-1:])
        z = np.broadcast_to(z, shape)
        K = knots.shape[-1]
        j = np.sum(knots <= z[..., None], axis=-1) - 1
        seg = np.clip(j, 0, K - 2)
        z0 = np.take_along_axis(knots, seg[..., None], axis=-1)[..., 0]
        z1 = np.take_along_axis(knots, (seg + 1)[..., None], axis=-1)[..., 0]
        u0 = self.levels[seg]
        u1 = self.levels[seg + 1]
        width = z1 - z0
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(width > 0, (z - z0) / width, 1.0)
        u = u0 + np.clip(frac, 0.0, 1.0) * (u1 - u0)
        u = np.where(j < 0, 0.0, np.where(j >= K - 1, 1.0, u))
        return u[()] if u.ndim == 0 else u

    def inverse(self, u):
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(u.shape, self.batch_shape)
        knots = np.broadcast_to(self.knots, shape + self.knots.shape[-1:])
        u = np.broadcast_to(u, shape)
        K = knots.shape[-1]
        seg = np.clip(np.searchsorted(self.levels, u, side="right") - 1, 0, K - 2)
        z0 = np.take_along_axis(knots, seg[..., None], axis=-1)[..., 0]
        z1 = np.take_along_axis(knots, (seg + 1)[..., None], axis=-1)[..., 0]
        u0 = self.levels[seg]
        u1 = self.levels[seg + 1]
        z = z0 + (u - u0) / (u1 - u0) * (z1 - z0)
        return z[()] if z.ndim == 0 else z

    def quantiles(self):
        return self.knots[..., 1:-1]


@dataclass(frozen=True)
class BetaCdf:
    """Beta CDF on ``[0, capacity]``: F(z) = I_{z / capacity}(alpha, beta)."""

    alpha: np.ndarray
    beta: np.ndarray
    capacity: np.ndarray = 1.0

    kind = "beta"

    def __post_init__(self):
        a, b, c = np.broadcast_arrays(
            np.asarray(self.alpha, dtype=float),
            np.asarray(self.beta, dtype=float),
            np.asarray(self.capacity, dtype=float),
        )
        if not ((a > 0).all() and (b > 0).all() and (c > 0).all()):
            raise ValueError("Beta parameters and capacity must be positive")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "capacity", c)

    @property
    def batch_shape(self):
        return self.alpha.shape

    @property
    def lower(self):
        return np.zeros(self.batch_shape)

    @property
    def upper(self):
        return self.capacity

    def __getitem__(self, index):
        return BetaCdf(self.alpha[index], self.beta[index], self.capacity[index])

    def cdf(self, z):
        x = np.clip(np.asarray(z, dtype=float) / self.capacity, 0.0, 1.0)
        return betainc(self.alpha, self.beta, x)

    def inverse(self, u):
        return betaincinv(self.alpha, self.beta, u, tol=1e-12) * self.capacity


def quantiles_to_cdf(q_values, levels, support, tails: str = "support") -> QuantileCdf:
    """Piecewise-linear CDF through predicted quantiles.

    ``q_values`` has shape ``batch + (Q,)``; ``support`` is a ``(lo, hi)``
    pair whose entries broadcast against ``batch``. Values are clamped into
    the support before the sortedness check.

    ``tails="support"`` runs the outer segments linearly to the support
    bounds. ``tails="extrapolate"`` continues the density of the adjacent
    inner segment instead, so the end knots sit at
    ``q_1 - q_1' (q_2 - q_1) / (q_2' - q_1')`` (levels primed) and its mirror
    image, clipped to the support. It needs at least two levels.
    """
    if tails not in ("support", "extrapolate"):
        raise ValueError(f"unknown tail rule {tails!r}")
    levels = np.asarray(levels, dtype=float)
    q = np.asarray(q_values, dtype=float)
    if q.shape[-1] != levels.shape[0]:
        raise UnsortedQuantiles(f"{q.shape[-1]} quantile values for {levels.shape[0]} levels")
    if not (np.all(np.diff(levels) > 0) and levels[0] > 0 and levels[-1] < 1):
        raise UnsortedQuantiles(f"levels must be strictly increasing inside (0, 1): {levels}")
    lo, hi = (np.asarray(s, dtype=float) for s in support)
    lo = np.broadcast_to(lo, q.shape[:-1])
    hi = np.broadcast_to(hi, q.shape[:-1])
    if np.any(hi < lo):
        raise OutOfSupport("support upper bound below lower bound")
    q = np.clip(q, lo[..., None], hi[..., None])
    if np.any(np.diff(q, axis=-1) < 0):
        raise UnsortedQuantiles("quantile values must be nondecreasing in the level")
    eps = SPREAD * (hi - lo)
    if tails == "extrapolate" and len(levels) >= 2:
        lo_t = q[..., 0] - (q[..., 1] - q[..., 0]) * levels[0] / (levels[1] - levels[0])
        hi_t = q[..., -1] + (q[..., -1] - q[..., -2]) * (1 - levels[-1]) / (levels[-1] - levels[-2])
        # keep room for the spread so a collapsed set still has a strictly monotone CDF
        room = (len(levels) + 2) * eps
        lo = np.maximum(lo, np.minimum(lo_t, q[..., 0] - room))
        hi = np.minimum(hi, np.maximum(hi_t, q[..., -1] + room))
    knots = np.concatenate([lo[..., None], q, hi[..., None]], axis=-1)
    knots = _spread_knots(knots, eps)
    grid = np.concatenate([[0.0], levels, [1.0]])
    return QuantileCdf(knots, grid)


def cdf_eval(m, z, strict: bool = True):
    """Evaluate ``m`` at ``z``; with ``strict`` points outside the support raise."""
    z = np.asarray(z, dtype=float)
    if strict:
        outside = (z < m.lower) | (z > m.upper)
        if np.any(outside):
            raise OutOfSupport(f"{np.count_nonzero(outside)} point(s) outside the marginal support")
    return m.cdf(z)


def cdf_inverse(m, u):
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise DomainError("probability levels must lie in [0, 1]")
    return m.inverse(u)
