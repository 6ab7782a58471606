"""Linear quantile-regression forecasters.

Both variants are a single affine map from a feature vector built from the
window to a ``D x H x Q`` block of quantiles:

* NLinear subtracts each series' last observed value from its past targets
  and adds it back to every output quantile of that series.
* DLinear splits the past targets into a moving-average trend and the
  seasonal remainder, each with its own weight block.

Past and future covariates enter both variants unchanged. Features are
standardized with statistics frozen at fit time. Every output cell regresses
on every input feature (joint sharing) unless ``sharing="per_series"``,
which restricts series ``i`` to its own past targets plus all covariates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..data import WindowBatch
from ..errors import BadKernel, NonFiniteLoss, ShapeMismatch, VersionMismatch

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)
VARIANTS = ("nlinear", "dlinear")
MODEL_FORMAT = "copulacast.linear-quantile"
MODEL_VERSION = 1


@dataclass(frozen=True)
class QuantileSet:
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        lv = tuple(float(q) for q in self.levels)
        if not lv or lv[0] <= 0 or lv[-1] >= 1 or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError(f"quantile levels must be strictly increasing in (0, 1): {lv}")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def column_names(self):
        return [f"q{round(100 * q):02d}" for q in self.levels]


def quantile_loss(z, z_hat, q):
    """Pinball loss ``q (z - z_hat)^+ + (1 - q) (z_hat - z)^+``."""
    diff = np.asarray(z, dtype=float) - np.asarray(z_hat, dtype=float)
    return q * np.maximum(diff, 0.0) + (1.0 - q) * np.maximum(-diff, 0.0)


def nlinear_preprocess(past):
    """Subtract the last value of each series; returns ``(shifted, last)``."""
    past = np.asarray(past, dtype=float)
    last = past[..., -1]
    return past - last[..., None], last


def nlinear_postprocess(raw, last):
    return np.asarray(raw) + np.asarray(last)


def dlinear_decompose(past, kernel: int):
    """Centered moving-average trend with edge replication, and the remainder.

    ``trend`` is re-derived as ``past - seasonal`` so that ``trend +
    seasonal`` reproduces the input (exactly for inputs whose rounding
    permits it, otherwise to one ulp).
    """
    past = np.asarray(past, dtype=float)
    W = past.shape[-1]
    if not (isinstance(kernel, (int, np.integer)) and 1 <= kernel <= W and kernel % 2 == 1):
        raise BadKernel(f"moving-average kernel must be odd and in [1, {W}], got {kernel}")
    half = kernel // 2
    padded = np.concatenate(
        [np.repeat(past[..., :1], half, axis=-1), past, np.repeat(past[..., -1:], half, axis=-1)],
        axis=-1,
    )
    csum = np.cumsum(np.concatenate([np.zeros(past.shape[:-1] + (1,)), padded], axis=-1), axis=-1)
    trend = (csum[..., kernel:] - csum[..., :-kernel]) / kernel
    if kernel == 1:
        trend = past.copy()
    seasonal = past - trend
    trend = past - seasonal
    return trend, seasonal


@dataclass
class LinearQuantileModel:
    """Affine quantile forecaster; see the module docstring for the feature map."""

    variant: str
    n_series: int
    n_covariates: int
    past: int
    horizon: int
    levels: tuple
    weight: np.ndarray
    bias: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    kernel: int | None = None
    sharing: str = "joint"
    seed: int | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.sharing not in ("joint", "per_series"):
            raise ValueError(f"unknown sharing {self.sharing!r}")
        if self.variant == "dlinear":
            if self.kernel is None or not (1 <= self.kernel <= self.past) or self.kernel % 2 == 0:
                raise BadKernel(f"DLinear kernel must be odd and in [1, {self.past}], got {self.kernel}")
        nf, no = n_features(self), n_outputs(self)
        if self.weight.shape != (nf, no) or self.bias.shape != (no,):
            raise ShapeMismatch(
                f"weights {self.weight.shape}/{self.bias.shape} do not match ({nf}, {no})"
            )
        self.levels = tuple(float(q) for q in self.levels)

    @property
    def shape(self):
        return self.n_series, self.n_covariates, self.past, self.horizon

    @property
    def n_target_blocks(self):
        return 2 if self.variant == "dlinear" else 1

    def _block(self, k):
        DW = self.n_series * self.past
        return self.weight[k * DW:(k + 1) * DW]

    @property
    def trend_weight(self):
        if self.variant != "dlinear":
            raise AttributeError("only DLinear has a trend block")
        return self._block(0)

    @property
    def seasonal_weight(self):
        if self.variant != "dlinear":
            raise AttributeError("only DLinear has a seasonal block")
        return self._block(1)

    def output_mask(self):
        return _sharing_mask(self.variant, self.sharing, *self.shape, len(self.levels))

    def copy(self):
        return replace(self, weight=self.weight.copy(), bias=self.bias.copy(), history=list(self.history))


def n_features(model_or_shape, n_covariates=None, past=None, horizon=None, variant=None):
    if isinstance(model_or_shape, LinearQuantileModel):
        m = model_or_shape
        D, Dc, W, H, variant = m.n_series, m.n_covariates, m.past, m.horizon, m.variant
    else:
        D, Dc, W, H = model_or_shape, n_covariates, past, horizon
    blocks = 2 if variant == "dlinear" else 1
    return blocks * D * W + Dc * W + Dc * H


def n_outputs(model):
    return model.n_series * model.horizon * len(model.levels)


def _sharing_mask(variant, sharing, D, Dc, W, H, Q):
    if sharing == "joint":
        return None
    blocks = 2 if variant == "dlinear" else 1
    nf = n_features(D, Dc, W, H, variant)
    mask = np.zeros((nf, D, H * Q), dtype=bool)
    for b in range(blocks):
        for i in range(D):
            mask[b * D * W + i * W: b * D * W + (i + 1) * W, i] = True
    mask[blocks * D * W:] = True
    return mask.reshape(nf, D * H * Q)


def raw_features(variant, kernel, past_targets, past_covs, future_covs):
    """Unstandardized features ``(N, F)`` and the per-series output offset ``(N, D)``."""
    N = past_targets.shape[0]
    if variant == "nlinear":
        shifted, last = nlinear_preprocess(past_targets)
        blocks = [shifted.reshape(N, -1)]
        offset = last
    else:
        trend, seasonal = dlinear_decompose(past_targets, kernel)
        blocks = [trend.reshape(N, -1), seasonal.reshape(N, -1)]
        offset = np.zeros(past_targets.shape[:2])
    blocks += [past_covs.reshape(N, -1), future_covs.reshape(N, -1)]
    return np.concatenate(blocks, axis=1), offset


def _check_batch(model, batch: WindowBatch):
    if batch.shape != model.shape:
        raise ShapeMismatch(f"window shape (D, D', W, H) = {batch.shape} does not match model {model.shape}")


def design(model, batch: WindowBatch):
    _check_batch(model, batch)
    X, offset = raw_features(
        model.variant, model.kernel, batch.past_targets, batch.past_covariates, batch.future_covariates
    )
    return (X - model.feature_mean) / model.feature_scale, offset


def raw_predict(model, X, offset):
    """Unsorted quantiles ``(N, D, H, Q)`` from standardized features."""
    N = X.shape[0]
    out = (X @ model.weight + model.bias).reshape(N, model.n_series, model.horizon, len(model.levels))
    return out + offset[:, :, None, None]


def predict_quantiles(model: LinearQuantileModel, windows) -> np.ndarray:
    """Quantile forecasts ``(N, D, H, Q)`` (or ``(D, H, Q)`` for one window), sorted along Q."""
    single = not isinstance(windows, (WindowBatch, list, tuple))
    batch = WindowBatch.from_windows([windows] if single else windows)
    X, offset = design(model, batch)
    out = np.sort(raw_predict(model, X, offset), axis=-1)
    return out[0] if single else out


def loss_and_grad(model, X, offset, Z):
    """Mean pinball loss and its gradient in ``(weight, bias)``.

    The objective sums the loss over cells ``(i, tau)`` and averages over
    windows and quantile levels. At a kink the subgradient ``1 - q`` is used.
    """
    N = X.shape[0]
    q = np.asarray(model.levels)
    pred = raw_predict(model, X, offset)
    diff = Z[..., None] - pred
    Q = len(q)
    loss = np.sum(quantile_loss(Z[..., None], pred, q)) / (N * Q)
    dpred = np.where(diff > 0, -q, 1.0 - q) / (N * Q)
    dflat = dpred.reshape(N, -1)
    gw = X.T @ dflat
    gb = dflat.sum(axis=0)
    mask = model.output_mask()
    if mask is not None:
        gw = gw * mask
    return loss, gw, gb


def _standardization(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def init_model(batch: WindowBatch, levels, variant, kernel=None, sharing="joint", init="lstsq", ridge=1e-3, seed=None):
    """Model with frozen standardization and initial weights.

    ``init="zeros"`` starts from zero weights and bias. ``init="lstsq"``
    starts from a ridge least-squares fit of the targets (shared by every
    level) with per-cell biases shifted by the empirical residual quantiles,
    a calibrated linear quantile model that gradient descent then refines.
    """
    D, Dc, W, H = batch.shape
    levels = tuple(QuantileSet(tuple(levels)).levels)
    Q = len(levels)
    X, offset = raw_features(variant, kernel, batch.past_targets, batch.past_covariates, batch.future_covariates)
    mean, scale = _standardization(X)
    Xs = (X - mean) / scale
    nf = Xs.shape[1]
    weight = np.zeros((nf, D * H * Q))
    bias = np.zeros(D * H * Q)
    model = LinearQuantileModel(
        variant, D, Dc, W, H, levels, weight, bias, mean, scale, kernel, sharing, seed
    )
    if init == "zeros":
        return model
    if init != "lstsq":
        raise ValueError(f"unknown init {init!r}")
    if batch.future_targets is None:
        raise ShapeMismatch("least-squares initialization needs future targets")
    Y = (batch.future_targets - offset[:, :, None]).reshape(len(batch), D * H)
    mask = model.output_mask()
    A = Xs.T @ Xs + ridge * len(batch) * np.eye(nf)
    ymean = Y.mean(axis=0)
    if mask is None:
        coef = np.linalg.solve(A, Xs.T @ (Y - ymean))
    else:
        coef = np.zeros((nf, D * H))
        fmask = mask.reshape(nf, D, H * Q)[:, :, 0]
        for i in range(D):
            cols = np.flatnonzero(fmask[:, i])
            sub = A[np.ix_(cols, cols)]
            yi = Y[:, i * H:(i + 1) * H] - ymean[i * H:(i + 1) * H]
            coef[np.ix_(cols, np.arange(i * H, (i + 1) * H))] = np.linalg.solve(sub, Xs[:, cols].T @ yi)
    resid = Y - ymean - Xs @ coef
    shifts = np.quantile(resid, levels, axis=0)  # (Q, D*H)
    model.weight = np.repeat(coef[:, :, None], Q, axis=2).reshape(nf, D * H * Q)
    model.bias = (ymean[None, :] + shifts).T.reshape(D * H * Q)
    return model


def fit_linear_quantile(
    windows,
    levels=DEFAULT_LEVELS,
    variant: str = "nlinear",
    *,
    epochs: int = 20,
    learning_rate: float = 0.05,
    batch_size: int = 64,
    seed: int = 0,
    kernel: int | None = 7,
    sharing: str = "joint",
    init: str = "lstsq",
    ridge: float = 1e-3,
) -> LinearQuantileModel:
    """Fit a linear quantile model by mini-batch (sub)gradient descent.

    Plain momentum-free updates with a fixed learning rate; the epoch
    permutation comes from ``seed`` so a fit is reproducible. The full
    training loss is tracked after every epoch and the parameters with the
    lowest loss are returned, which guarantees the final loss never exceeds
    the initial one.
    """
    batch = WindowBatch.from_windows(windows)
    if batch.future_targets is None:
        raise ShapeMismatch("training windows need future targets")
    if variant == "nlinear":
        kernel = None
    model = init_model(batch, levels, variant, kernel, sharing, init, ridge, seed)
    X, offset = design(model, batch)
    Z = batch.future_targets
    rng = np.random.default_rng(seed)
    mask = model.output_mask()

    best_loss, _, _ = loss_and_grad(model, X, offset, Z)
    best = (model.weight.copy(), model.bias.copy())
    history = [best_loss]
    N = len(batch)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(N)
        for start in range(0, N, batch_size):
            idx = order[start:start + batch_size]
            _, gw, gb = loss_and_grad(model, X[idx], offset[idx], Z[idx])
            model.weight -= learning_rate * gw
            model.bias -= learning_rate * gb
        if mask is not None:
            model.weight *= mask
        loss, _, _ = loss_and_grad(model, X, offset, Z)
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch, loss)
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best = (model.weight.copy(), model.bias.copy())
    model.weight, model.bias = best
    model.history = history
    logger.debug("fit %s: loss %.6g -> %.6g over %d epochs", variant, history[0], best_loss, epochs)
    return model


def training_loss(model, windows) -> float:
    batch = WindowBatch.from_windows(windows)
    X, offset = design(model, batch)
    return loss_and_grad(model, X, offset, batch.future_targets)[0]


def model_to_json(model: LinearQuantileModel, **extra) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "variant": model.variant,
        "shapes": {
            "n_series": model.n_series,
            "n_covariates": model.n_covariates,
            "past": model.past,
            "horizon": model.horizon,
            "n_features": int(model.weight.shape[0]),
            "n_outputs": int(model.weight.shape[1]),
        },
        "kernel": model.kernel,
        "sharing": model.sharing,
        "levels": list(model.levels),
        "seed": model.seed,
        "weight": model.weight.ravel().tolist(),
        "bias": model.bias.tolist(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "history": [float(h) for h in model.history],
    }
    doc.update(extra)
    return json.dumps(doc, indent=1)


def model_from_json(text: str) -> tuple[LinearQuantileModel, dict]:
    """Inverse of :func:`model_to_json`; also returns any extra top-level keys."""
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(
            f"unsupported model file {doc.get('format')!r} v{doc.get('version')}, "
            f"expected {MODEL_FORMAT!r} v{MODEL_VERSION}"
        )
    s = doc["shapes"]
    model = LinearQuantileModel(
        doc["variant"],
        s["n_series"],
        s["n_covariates"],
        s["past"],
        s["horizon"],
        tuple(doc["levels"]),
        np.array(doc["weight"], dtype=float).reshape(s["n_features"], s["n_outputs"]),
        np.array(doc["bias"], dtype=float),
        np.array(doc["feature_mean"], dtype=float),
        np.array(doc["feature_scale"], dtype=float),
        doc["kernel"],
        doc["sharing"],
        doc["seed"],
        list(doc.get("history", [])),
    )
    known = {"format", "version", "variant", "shapes", "kernel", "sharing", "levels", "seed",
             "weight", "bias", "feature_mean", "feature_scale", "history"}
    return model, {k: v for k, v in doc.items() if k not in known}


def quantiles_to_rows(origins, location_ids, quantiles, levels):
    """Long-form rows ``origin, location, step, q..`` for CSV export."""
    rows = []
    N, D, H, _ = quantiles.shape
    for n in range(N):
        for i in range(D):
            for h in range(H):
                rows.append([origins[n], location_ids[i], h + 1, *quantiles[n, i, h].tolist()])
    return rows
