"""Deterministic and ensemble scores.

All per-origin scores are computed first and then averaged over origins, so
every aggregate decomposes as the mean of its per-origin values. RMSE is the
exception by construction: its per-origin entry is the mean squared error
and the aggregate is the square root of their mean.

Variogram scores come in two forms. ``"difference"`` (the default) sums the
difference between the observed and the ensemble-mean variogram over all
unordered pairs; negative values are possible and are flagged in reports.
``"squared"`` squares each pairwise difference before summing, which is the
usual proper-score form.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DimensionMismatch, MissingForecast, NoScenarios

VARIOGRAM_FORMS = ("difference", "squared")
DEFAULT_VARIOGRAM_FORM = "difference"


@dataclass
class EvaluationBatch:
    """Actuals ``(N, D, H)`` with optional point forecasts and scenarios.

    ``scenarios`` is ``(N, S, D, H)``; ``capacities`` is ``(D,)`` in MW.
    """

    origins: np.ndarray
    actual: np.ndarray
    capacities: np.ndarray
    forecast: np.ndarray | None = None
    scenarios: np.ndarray | None = None

    def __post_init__(self):
        self.origins = np.asarray(self.origins)
        self.actual = np.asarray(self.actual, dtype=float)
        self.capacities = np.asarray(self.capacities, dtype=float)
        if self.actual.ndim != 3:
            raise DimensionMismatch(f"actuals must be (N, D, H), got {self.actual.shape}")
        N, D, H = self.actual.shape
        if self.origins.shape != (N,):
            raise DimensionMismatch("one origin per actual required")
        if self.capacities.shape != (D,):
            raise DimensionMismatch(f"need {D} capacities, got {self.capacities.shape}")
        if not np.isfinite(self.actual).all():
            raise DimensionMismatch("actuals must be finite")
        if self.forecast is not None:
            self.forecast = np.asarray(self.forecast, dtype=float)
            if self.forecast.shape != self.actual.shape:
                raise DimensionMismatch(f"forecast shape {self.forecast.shape} != {self.actual.shape}")
        if self.scenarios is not None:
            self.scenarios = np.asarray(self.scenarios, dtype=float)
            if self.scenarios.ndim != 4 or self.scenarios.shape[0] != N or self.scenarios.shape[2:] != (D, H):
                raise DimensionMismatch(f"scenarios must be (N, S, D, H), got {self.scenarios.shape}")

    @property
    def n_scenarios(self):
        return 0 if self.scenarios is None else self.scenarios.shape[1]


def _need_forecast(batch, metric):
    if batch.forecast is None:
        raise MissingForecast(f"{metric} needs deterministic forecasts")
    return batch.forecast - batch.actual


def _need_scenarios(batch, metric, minimum=1):
    if batch.scenarios is None or batch.n_scenarios < minimum:
        raise NoScenarios(f"{metric} needs at least {minimum} scenario(s) per origin")
    return batch.scenarios


# deterministic ---------------------------------------------------------------

def nmae_ind_per_origin(batch):
    err = _need_forecast(batch, "nmae_ind")
    return 100.0 * np.mean(np.abs(err) / batch.capacities[None, :, None], axis=(1, 2))


def nmae_ssum_per_origin(batch):
    err = _need_forecast(batch, "nmae_ssum")
    return 100.0 * np.mean(np.abs(err.sum(axis=1)), axis=1) / batch.capacities.sum()


def mse_ind_per_origin(batch):
    err = _need_forecast(batch, "rmse_ind")
    return np.mean(err ** 2, axis=(1, 2))


def mse_ssum_per_origin(batch):
    err = _need_forecast(batch, "rmse_ssum")
    return np.mean(err.sum(axis=1) ** 2, axis=1)


def nmae_ind(batch) -> float:
    return float(np.mean(nmae_ind_per_origin(batch)))


def nmae_ssum(batch) -> float:
    return float(np.mean(nmae_ssum_per_origin(batch)))


def rmse_ind(batch) -> float:
    return float(np.sqrt(np.mean(mse_ind_per_origin(batch))))


def rmse_ssum(batch) -> float:
    return float(np.sqrt(np.mean(mse_ssum_per_origin(batch))))


def lead_time_mae(batch) -> np.ndarray:
    """MAE in MW per horizon step, averaged over origins and locations."""
    err = _need_forecast(batch, "lead_time_mae")
    return np.mean(np.abs(err), axis=(0, 1))


# energy distance ---------------------------------------------------------------

def energy_distance(x, y) -> float:
    """V-statistic energy distance between sample sets ``x (n, k)`` and ``y (m, k)``.

    ``2/(nm) sum ||x_i - y_j|| - 1/n^2 sum ||x_i - x_j|| - 1/m^2 sum ||y_i - y_j||``;
    with ``m = 1`` the last term vanishes.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"sample dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    n, m = len(x), len(y)
    if n < 1 or m < 1:
        raise DimensionMismatch("both sample sets need at least one point")
    cross = cdist(x, y).sum()
    xx = 2.0 * pdist(x).sum() if n > 1 else 0.0
    yy = 2.0 * pdist(y).sum() if m > 1 else 0.0
    return float(2.0 * cross / (n * m) - xx / n ** 2 - yy / m ** 2)


def ed_ind_per_origin(batch):
    sc = _need_scenarios(batch, "ed_ind", 2)
    N, S = sc.shape[:2]
    return np.array([
        energy_distance(sc[n].reshape(S, -1), batch.actual[n].reshape(1, -1)) for n in range(N)
    ])


def ed_ssum_per_origin(batch):
    sc = _need_scenarios(batch, "ed_ssum", 2)
    sums = sc.sum(axis=2)
    actual = batch.actual.sum(axis=1)
    return np.array([energy_distance(sums[n], actual[n][None, :]) for n in range(len(sums))])


def ed_ind(batch) -> float:
    return float(np.mean(ed_ind_per_origin(batch)))


def ed_ssum(batch) -> float:
    return float(np.mean(ed_ssum_per_origin(batch)))


# variogram ---------------------------------------------------------------------

def _variogram(obs, ens, p, form):
    """Score of one origin: ``obs (K,)`` aggregated actuals, ``ens (S, K)`` scenarios.

    Each unordered pair ``k1 < k2`` is counted once; the ordered double sum
    is exactly twice this because the diagonal terms vanish.
    """
    if form not in VARIOGRAM_FORMS:
        raise ValueError(f"unknown variogram form {form!r}")
    a, b = np.triu_indices(obs.shape[0], 1)
    v_obs = np.abs(obs[a] - obs[b]) ** p
    v_ens = np.mean(np.abs(ens[:, a] - ens[:, b]) ** p, axis=0)
    diff = v_obs - v_ens
    return float(np.sum(diff ** 2) if form == "squared" else np.sum(diff))


def variogram_ssum_per_origin(batch, p=0.5, form=DEFAULT_VARIOGRAM_FORM):
    """Variogram over horizon steps of the location sums (temporal structure)."""
    if p <= 0:
        raise ValueError("variogram order p must be positive")
    sc = _need_scenarios(batch, "variogram_ssum")
    obs = batch.actual.sum(axis=1)
    ens = sc.sum(axis=2)
    return np.array([_variogram(obs[n], ens[n], p, form) for n in range(len(obs))])


def variogram_tsum_per_origin(batch, p=0.5, form=DEFAULT_VARIOGRAM_FORM):
    """Variogram over locations of the horizon sums (spatial structure)."""
    if p <= 0:
        raise ValueError("variogram order p must be positive")
    sc = _need_scenarios(batch, "variogram_tsum")
    obs = batch.actual.sum(axis=2)
    ens = sc.sum(axis=3)
    return np.array([_variogram(obs[n], ens[n], p, form) for n in range(len(obs))])


def variogram_ssum(batch, p=0.5, form=DEFAULT_VARIOGRAM_FORM) -> float:
    return float(np.mean(variogram_ssum_per_origin(batch, p, form)))


def variogram_tsum(batch, p=0.5, form=DEFAULT_VARIOGRAM_FORM) -> float:
    return float(np.mean(variogram_tsum_per_origin(batch, p, form)))


# report ------------------------------------------------------------------------

# name -> (metric, level, per-origin function, aggregation)
_METRICS = {
    "nmae_ind": ("nmae", "ind", nmae_ind_per_origin, "mean"),
    "nmae_ssum": ("nmae", "s-sum", nmae_ssum_per_origin, "mean"),
    "rmse_ind": ("rmse", "ind", mse_ind_per_origin, "sqrt_mean"),
    "rmse_ssum": ("rmse", "s-sum", mse_ssum_per_origin, "sqrt_mean"),
    "ed_ind": ("ed", "ind", ed_ind_per_origin, "mean"),
    "ed_ssum": ("ed", "s-sum", ed_ssum_per_origin, "mean"),
    "vs_ssum": ("vs", "s-sum", variogram_ssum_per_origin, "mean"),
    "vs_tsum": ("vs", "t-sum", variogram_tsum_per_origin, "mean"),
}
METRIC_NAMES = tuple(_METRICS)
METRIC_GROUPS = {
    "nmae": ("nmae_ind", "nmae_ssum"),
    "rmse": ("rmse_ind", "rmse_ssum"),
    "ed": ("ed_ind", "ed_ssum"),
    "vs": ("vs_ssum", "vs_tsum"),
}


def expand_metrics(which):
    out = []
    for name in which:
        names = METRIC_GROUPS.get(name, (name,))
        for n in names:
            if n not in _METRICS:
                raise ValueError(f"unknown metric {n!r}")
            if n not in out:
                out.append(n)
    return out


@dataclass
class ScoreReport:
    values: dict
    per_origin: dict
    origins: np.ndarray
    n_test: int
    n_series: int
    horizon: int
    n_scenarios: int
    flags: list = field(default_factory=list)
    variogram_p: float = 0.5
    variogram_form: str = DEFAULT_VARIOGRAM_FORM

    def to_dict(self) -> dict:
        return {
            "counts": {"n_test": self.n_test, "D": self.n_series, "H": self.horizon, "S": self.n_scenarios},
            "variogram": {"p": self.variogram_p, "form": self.variogram_form},
            "metrics": {
                name: {"metric": _METRICS[name][0], "level": _METRICS[name][1], "value": value}
                for name, value in self.values.items()
            },
            "per_origin": {
                "origin": [int(o) for o in self.origins],
                **{name: [float(v) for v in vals] for name, vals in self.per_origin.items()},
            },
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def csv_rows(self):
        rows = [["metric", "level", "value", "n_origins", "S"]]
        for name, value in self.values.items():
            metric, level = _METRICS[name][:2]
            rows.append([metric, level, repr(float(value)), self.n_test, self.n_scenarios])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.csv_rows())


def score_report(batch: EvaluationBatch, which=METRIC_NAMES, p=0.5, variogram_form=DEFAULT_VARIOGRAM_FORM) -> ScoreReport:
    """Compute the requested metrics with per-origin breakdowns.

    ``which`` accepts metric names (``"nmae_ind"``) or groups (``"nmae"``).
    Origins are scored in ascending origin order.
    """
    order = np.argsort(batch.origins, kind="stable")
    if not np.array_equal(order, np.arange(len(order))):
        batch = EvaluationBatch(
            batch.origins[order], batch.actual[order], batch.capacities,
            None if batch.forecast is None else batch.forecast[order],
            None if batch.scenarios is None else batch.scenarios[order],
        )
    values, per_origin, flags = {}, {}, []
    for name in expand_metrics(which):
        metric, level, fn, agg = _METRICS[name]
        try:
            if metric == "vs":
                per = fn(batch, p, variogram_form)
            else:
                per = fn(batch)
        except (MissingForecast, NoScenarios) as exc:
            raise type(exc)(f"{name}: {exc}") from None
        per_origin[name] = per
        values[name] = float(np.sqrt(per.mean()) if agg == "sqrt_mean" else per.mean())
        if metric == "vs" and (per < 0).any():
            flags.append(f"{name}: {int((per < 0).sum())} negative per-origin value(s)")
    N, D, H = batch.actual.shape
    return ScoreReport(values, per_origin, batch.origins, N, D, H, batch.n_scenarios, flags, p, variogram_form)


def write_lead_time_csv(path, batch) -> None:
    mae = lead_time_mae(batch)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mae_mw"])
        for h, v in enumerate(mae, start=1):
            w.writerow([h, repr(float(v))])


def merge_reports(reports) -> ScoreReport:
    """Pool the per-origin values of several reports (e.g. one per split) into one."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    first = reports[0]
    origins = np.concatenate([r.origins for r in reports])
    per_origin = {name: np.concatenate([r.per_origin[name] for r in reports]) for name in first.per_origin}
    values = {}
    for name, per in per_origin.items():
        values[name] = float(np.sqrt(per.mean()) if _METRICS[name][3] == "sqrt_mean" else per.mean())
    flags = [f for r in reports for f in r.flags]
    return ScoreReport(values, per_origin, origins, len(origins), first.n_series, first.horizon,
                       first.n_scenarios, flags, first.variogram_p, first.variogram_form)
