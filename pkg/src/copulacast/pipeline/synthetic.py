"""Synthetic panels with known structure, for verification runs.

Each location follows ``z_t = level + amp sin(2 pi (hour + phase_i) / 24) + y_t``
with a cross-correlated AR(1) component ``y_t = phi y_{t-1} + eps_t``. The
innovation splits into a part revealed by the covariate and a hidden part,

    eps_t = sigma (sqrt(kappa) xi_t + sqrt(1 - kappa) eta_t),

where ``xi`` and ``eta`` are independent in time, equicorrelated (``rho``)
across locations, and the covariate of location ``i`` at time ``t`` is
``xi_{i,t}``. Seen as a future covariate it drives the next step exactly,
so a model that uses it can remove a share ``kappa`` of the noise variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..data import CovariatePanel, SeriesPanel
from ..errors import ConfigError

@dataclass(frozen=True)
class SyntheticSpec:
    n_series: int = 5
    n_times: int = 2000
    phi: float = 0.8
    rho: float = 0.5
    sigma: float = 0.1
    amplitude: float = 0.3
    seed: int = 0
    level: float = 1.0
    covariate_share: float = 0.5
    start: str = "2020-01-01T00:00:00"

    def __post_init__(self):
        if self.n_series < 1 or self.n_times < 2:
            raise ConfigError(f"need n_series >= 1 and n_times >= 2, got {self.n_series}, {self.n_times}")
        if not -1.0 < self.phi < 1.0:
            raise ConfigError(f"AR coefficient must lie in (-1, 1) for stationarity, got {self.phi}")
        # equicorrelation is PSD iff -1/(D-1) <= rho <= 1
        low = -1.0 / (self.n_series - 1) if self.n_series > 1 else -1.0
        if not low <= self.rho <= 1.0:
            raise ConfigError(f"cross-correlation {self.rho} gives an indefinite covariance for D={self.n_series}")
        if self.sigma < 0 or not 0.0 <= self.covariate_share <= 1.0:
            raise ConfigError("sigma must be nonnegative and covariate_share in [0, 1]")


@dataclass(frozen=True)
class SyntheticTruth:
    """Generating parameters plus the pieces needed for conditional quantiles."""

    spec: SyntheticSpec
    diurnal: np.ndarray  # (D, T)
    ar: np.ndarray  # (D, T), the y component
    phases: np.ndarray  # (D,)
    covariate: np.ndarray  # (D, T), the xi component

    def conditional_quantiles(self, origins, horizon: int, levels, use_covariates: bool = True):
        """True quantiles ``(N, D, H, Q)`` of ``z_{t+tau}`` given data up to ``t - 1``.

        With ``use_covariates`` the covariate values over the horizon are
        also conditioned on.
        """
        s = self.spec
        origins = np.asarray(origins)
        steps = np.arange(horizon)
        y_last = self.ar[:, origins - 1].T  # (N, D)
        mean = s.phi ** (steps + 1)[None, None, :] * y_last[:, :, None]
        share = 1.0 - s.covariate_share if use_covariates else 1.0
        var = np.cumsum(s.phi ** (2 * steps)) * s.sigma ** 2 * share  # var after tau + 1 steps
        if use_covariates and s.covariate_share > 0:
            xi = np.sqrt(s.covariate_share) * s.sigma * self.covariate
            # known part: sum_k phi^(tau - k) xi_{t+k}
            idx = origins[:, None] + steps[None, :]
            x = np.moveaxis(xi[:, idx], 0, 1)  # (N, D, H)
            known = np.zeros_like(x)
            acc = np.zeros(x.shape[:2])
            for h in range(horizon):
                acc = s.phi * acc + x[:, :, h]
                known[:, :, h] = acc
            mean = mean + known
        idx = origins[:, None] + steps[None, :]
        base = np.moveaxis(self.diurnal[:, idx], 0, 1) + mean
        z = norm.ppf(np.asarray(levels, dtype=float))
        return base[..., None] + np.sqrt(var)[None, None, :, None] * z


def _equicorrelation_sqrt(D, rho):
    C = np.full((D, D), rho) + (1.0 - rho) * np.eye(D)
    w, Q = np.linalg.eigh(C)
    return Q * np.sqrt(np.clip(w, 0.0, None))


def generate_synthetic(spec: SyntheticSpec):
    """Returns ``(SeriesPanel, CovariatePanel, SyntheticTruth)``."""
    D, T = spec.n_series, spec.n_times
    rng = np.random.default_rng(spec.seed)
    root = _equicorrelation_sqrt(D, spec.rho)
    xi = root @ rng.standard_normal((D, T))
    eta = root @ rng.standard_normal((D, T))
    eps = spec.sigma * (np.sqrt(spec.covariate_share) * xi + np.sqrt(1.0 - spec.covariate_share) * eta)
    phases = rng.uniform(0.0, 24.0, D)
    y = np.empty((D, T))
    # start from the stationary distribution
    y[:, 0] = eps[:, 0] / np.sqrt(1.0 - spec.phi ** 2)
    for t in range(1, T):
        y[:, t] = spec.phi * y[:, t - 1] + eps[:, t]
    stamps = np.datetime64(spec.start, "s") + np.arange(T) * np.timedelta64(3600, "s")
    hours = np.arange(T) % 24
    diurnal = spec.level + spec.amplitude * np.sin(2 * np.pi * (hours[None, :] + phases[:, None]) / 24.0)
    ids = [f"loc{i}" for i in range(D)]
    panel = SeriesPanel(ids, stamps, diurnal + y)
    covs = CovariatePanel([f"x_loc{i}" for i in range(D)], stamps, xi)
    return panel, covs, SyntheticTruth(spec, diurnal, y, phases, xi)
