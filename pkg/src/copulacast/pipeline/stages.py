"""Pipeline stages: fit, copula, scenarios, score and the full backtest.

Stage commands work on one split of the plan (``split.index``) and talk to
each other only through files in ``run.output_dir``:

==================  ===========================================
``fit``             ``model.json``
``copula``          ``copula.bin`` + ``copula.json``
``scenarios``       ``forecasts.csv`` + ``forecasts.json``,
                    ``scenarios_<mode>.bin`` + ``.json`` (+ ``.csv``)
``score``           ``scores_<mode>.json``, ``scores_<mode>.csv``,
                    ``lead_time.csv``
==================  ===========================================

Models are trained on capacity factors (values divided by the training
maximum, or by the capacities file). Each marginal is the piecewise-linear
CDF through the predicted quantiles with support ``[min(0, training
minimum), 1]`` per location; ``model.tails`` picks how the outer segments
reach the support (see :func:`copulacast.marginals.cdf.quantiles_to_cdf`).
The deterministic forecast scored by NMAE and RMSE is the median level (or
the middle level if 0.5 is absent).
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from dataclasses import dataclass

import numpy as np

from ..copula import COPULA, MARGINAL_ONLY, estimate_correlation, generate_scenarios, make_copula, pit_transform
from ..data import (
    CovariatePanel,
    CapacityVector,
    WindowSpec,
    build_windows,
    derive_capacity,
    interpolate_covariates,
    load_capacities_csv,
    load_panel_csv,
    normalize,
    time_encoding_panel,
)
from ..errors import CopulacastError, StaleArtifact, VersionMismatch
from ..marginals.cdf import quantiles_to_cdf
from ..marginals.quantile import QuantileSet, fit_linear_quantile, model_from_json, model_to_json, predict_quantiles, quantiles_to_rows
from ..metrics import EvaluationBatch, ScoreReport, merge_reports, score_report, write_lead_time_csv
from . import artifacts as art
from .config import RunConfig, derive_seed
from .splits import make_split_plan
from .synthetic import SyntheticSpec, generate_synthetic

logger = logging.getLogger(__name__)

MODE_LABELS = {MARGINAL_ONLY: "mar", COPULA: "cop"}


@dataclass(frozen=True)
class Dataset:
    panel: object  # SeriesPanel, MW
    covariates: CovariatePanel
    capacities: dict | None
    digest: str


def load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg["data"]
    panel = load_panel_csv(d["targets"], "series", ffill=d["ffill"])
    covs = CovariatePanel.empty(panel.timestamps)
    if d["covariates"] and cfg["model"]["use_covariates"]:
        raw = load_panel_csv(d["covariates"], "covariate", step_hours=d["covariate_step_hours"], ffill=d["ffill"])
        covs = interpolate_covariates(raw, panel.timestamps)
    if d["time_encodings"]:
        covs = covs.stack(time_encoding_panel(panel.timestamps))
    caps = load_capacities_csv(d["capacities"]) if d["capacities"] else None
    h = hashlib.sha256()
    for key in ("targets", "covariates", "capacities"):
        h.update(f"{key}:{art.file_digest(d[key]) if d[key] else '-'};".encode())
    h.update(f"ffill:{d['ffill']};enc:{d['time_encodings']};step:{d['covariate_step_hours']}".encode())
    return Dataset(panel, covs, caps, h.hexdigest()[:16])


# lineage hashes ------------------------------------------------------------------

def fit_hash(cfg, data: Dataset, variant: str, split_index: int) -> str:
    extra = {"data": data.digest, "seed": cfg.require_seed(), "variant": variant, "split": split_index}
    return cfg.section_hash("window", "model", "quantiles", "split", extra=extra)


def copula_hash(cfg, fit_h: str) -> str:
    return cfg.section_hash("copula", extra={"fit": fit_h})


def scenario_hash(cfg, fit_h: str, copula_h: str | None, mode: str) -> str:
    extra = {"fit": fit_h, "copula": copula_h, "mode": mode, "S": cfg["scenarios"]["n_scenarios"],
             "origin_stride": cfg["split"]["origin_stride"]}
    return cfg.section_hash(extra=extra)


# per-split computation -------------------------------------------------------------

@dataclass(frozen=True)
class SplitContext:
    index: int
    split: object
    spec: WindowSpec
    capacities: CapacityVector
    normalized: object
    covariates: CovariatePanel
    support_lo: np.ndarray


def split_plan(cfg, data: Dataset):
    sp = cfg["split"]
    return make_split_plan(
        data.panel.timestamps, sp["policy"], past=cfg["window"]["past"], horizon=cfg["window"]["horizon"],
        train=sp["train"], validation=sp["validation"], test=sp["test"],
        min_train_days=sp["min_train_days"], validation_days=sp["validation_days"], test_days=sp["test_days"],
    )


def _resolve_index(index, n):
    k = index + n if index < 0 else index
    if not 0 <= k < n:
        from ..errors import ConfigError

        raise ConfigError(f"split.index: {index} out of range for a plan of {n} split(s)")
    return k


def prepare_split(cfg, data: Dataset, index: int, split) -> SplitContext:
    spec = WindowSpec(cfg["window"]["past"], cfg["window"]["horizon"])
    train_end = split.train[1]
    caps = derive_capacity(data.panel, train_end, overrides=data.capacities)
    normalized = normalize(data.panel, caps)
    support_lo = np.minimum(0.0, normalized.values[:, :train_end].min(axis=1))
    return SplitContext(index, split, spec, caps, normalized, data.covariates, support_lo)


def train_windows(ctx: SplitContext, stride: int = 1):
    """Windows whose horizon ends inside the training range."""
    W, H = ctx.spec.past, ctx.spec.horizon
    return build_windows(ctx.normalized, ctx.covariates, ctx.spec, (W, ctx.split.train[1] - H), stride)


def test_windows(ctx: SplitContext, stride: int = 1):
    """Windows whose horizon lies inside the test range."""
    start, stop = ctx.split.test
    return build_windows(ctx.normalized, ctx.covariates, ctx.spec, (start, stop - ctx.spec.horizon), stride)


def fit_model(cfg, ctx: SplitContext, variant: str, seed: int):
    m = cfg["model"]
    return fit_linear_quantile(
        train_windows(ctx), cfg["quantiles"]["levels"], variant,
        epochs=m["epochs"], learning_rate=m["learning_rate"], batch_size=m["batch_size"],
        seed=seed, kernel=m["kernel"], sharing=m["sharing"], init=m["init"], ridge=m["ridge"],
    )


def marginals_for(model, batch, support_lo, tails="extrapolate"):
    q = predict_quantiles(model, batch)
    lo = support_lo[None, :, None]
    return q, quantiles_to_cdf(q, model.levels, (lo, 1.0), tails)


def estimate_copula(cfg, ctx: SplitContext, model):
    """Correlation of the Gaussianized PITs of training targets under the fitted marginals."""
    batch = train_windows(ctx, cfg["copula"]["stride"])
    _, marg = marginals_for(model, batch, ctx.support_lo, cfg["model"]["tails"])
    pit = pit_transform(batch.future_targets, marg, cfg["copula"]["clamp"])
    R = estimate_correlation(pit, cfg["copula"]["shrinkage"])
    return make_copula(R)


def median_index(levels):
    levels = list(levels)
    return levels.index(0.5) if 0.5 in levels else len(levels) // 2


def simulate(cfg, ctx: SplitContext, model, copula, seed: int, workers=None):
    """Quantile forecasts and scenarios (both in MW) at the test origins.

    Returns ``(origins, quantiles (N, D, H, Q), scenarios (N, S, D, H))``.
    The scenarios of origin ``t`` use seed ``derive_seed(seed, t)``.
    """
    batch = test_windows(ctx, cfg["split"]["origin_stride"])
    q, marg = marginals_for(model, batch, ctx.support_lo, cfg["model"]["tails"])
    S = cfg["scenarios"]["n_scenarios"]
    cap = ctx.capacities.values
    out = np.empty((len(batch), S) + q.shape[1:3])
    for n, origin in enumerate(batch.origins):
        sc = generate_scenarios(copula, marg[n], S, derive_seed(seed, int(origin)), int(origin), workers)
        out[n] = sc.values * cap[None, :, None]
    return batch.origins, q * cap[None, :, None, None], out


def actuals(data: Dataset, origins, horizon):
    idx = np.asarray(origins)[:, None] + np.arange(horizon)[None, :]
    return np.moveaxis(data.panel.values[:, idx], 0, 1)


def _score(cfg, data, caps, origins, quantiles, scenarios, levels):
    mt = cfg["metrics"]
    batch = EvaluationBatch(
        origins, actuals(data, origins, cfg["window"]["horizon"]), caps.values,
        quantiles[..., median_index(levels)], scenarios,
    )
    return score_report(batch, mt["which"], mt["p"], mt["variogram_form"]), batch


def _with_split(exc: CopulacastError, index: int):
    exc.args = (f"split {index}: {exc}",)
    return exc


# stage commands --------------------------------------------------------------------

def _out(cfg, *parts):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, *parts)


def _single_split(cfg, data):
    plan = split_plan(cfg, data)
    k = _resolve_index(cfg["split"]["index"], len(plan))
    return prepare_split(cfg, data, k, plan[k])


def run_synth(cfg: RunConfig):
    """Write a synthetic panel to the configured data paths; returns the truth object."""
    from ..data import write_panel_csv

    sy = cfg["synth"]
    spec = SyntheticSpec(seed=derive_seed(cfg.require_seed(), "synth"), **{k: sy[k] for k in sy})
    panel, covs, truth = generate_synthetic(spec)
    d = cfg["data"]
    if d["targets"] is None:
        from ..errors import ConfigError

        raise ConfigError("data.targets: required as the synth output path")
    for path in (d["targets"], d["covariates"], d["capacities"]):
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    write_panel_csv(d["targets"], panel)
    if d["covariates"]:
        write_panel_csv(d["covariates"], covs)
    if d["capacities"]:
        with open(d["capacities"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["location_id", "capacity_mw"])
            for loc, v in zip(panel.location_ids, panel.values.max(axis=1)):
                w.writerow([loc, repr(float(v))])
    doc = {"spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__}, "phases": truth.phases.tolist()}
    art.write_json(os.path.splitext(d["targets"])[0] + ".truth.json", doc)
    return panel, covs, truth


def run_fit(cfg: RunConfig, data: Dataset | None = None):
    data = data or load_dataset(cfg)
    ctx = _single_split(cfg, data)
    variant = cfg["model"]["variant"]
    seed = derive_seed(cfg.require_seed(), "fit", ctx.index, variant)
    model = fit_model(cfg, ctx, variant, seed)
    h = fit_hash(cfg, data, variant, ctx.index)
    path = _out(cfg, "model.json")
    with open(path, "w") as fh:
        fh.write(model_to_json(
            model, lineage={"data": data.digest, "fit": h}, split={"index": ctx.index, **ctx.split.__dict__},
            location_ids=list(ctx.capacities.location_ids), capacities=ctx.capacities.values.tolist(),
            support_lo=ctx.support_lo.tolist(),
        ))
    return model, path


def _load_model(cfg, data):
    path = _out(cfg, "model.json")
    if not os.path.isfile(path):
        raise StaleArtifact(f"{path} missing; run the fit stage first")
    with open(path) as fh:
        model, extra = model_from_json(fh.read())
    D, H = data.panel.n_series, cfg["window"]["horizon"]
    if (model.n_series, model.horizon, model.past) != (D, H, cfg["window"]["past"]):
        raise VersionMismatch(
            f"model was trained for D={model.n_series}, W={model.past}, H={model.horizon}; "
            f"config has D={D}, W={cfg['window']['past']}, H={H}"
        )
    return model, extra


def _context_from_model(cfg, data, extra):
    plan = split_plan(cfg, data)
    k = _resolve_index(cfg["split"]["index"], len(plan))
    ctx = prepare_split(cfg, data, k, plan[k])
    return SplitContext(
        ctx.index, ctx.split, ctx.spec,
        CapacityVector(extra["location_ids"], np.array(extra["capacities"])),
        ctx.normalized, ctx.covariates, np.array(extra["support_lo"]),
    )


def run_copula(cfg: RunConfig, data: Dataset | None = None):
    data = data or load_dataset(cfg)
    model, extra = _load_model(cfg, data)
    ctx = _context_from_model(cfg, data, extra)
    fh_ = fit_hash(cfg, data, cfg["model"]["variant"], ctx.index)
    art.check_lineage(extra, {"fit": fh_}, "model.json")
    cop = estimate_copula(cfg, ctx, model)
    R = cop.correlation
    art.write_correlation(_out(cfg, "copula.bin"), R.values)
    art.write_json(_out(cfg, "copula.json"), {
        "format": "copulacast.copula", "version": art.FORMAT_VERSION,
        "n_series": model.n_series, "horizon": model.horizon, "layout": "location-major",
        "repair": R.metadata(), "lineage": {"fit": fh_, "copula": copula_hash(cfg, fh_)},
    })
    return cop


def _load_copula(cfg, D, H):
    meta_path = _out(cfg, "copula.json")
    if not os.path.isfile(meta_path):
        raise StaleArtifact(f"{meta_path} missing; run the copula stage first")
    meta = art.read_json(meta_path)
    if meta.get("version") != art.FORMAT_VERSION:
        raise VersionMismatch(f"{meta_path}: unsupported version {meta.get('version')}")
    if (meta["n_series"], meta["horizon"]) != (D, H):
        raise VersionMismatch(
            f"copula was estimated for D={meta['n_series']}, H={meta['horizon']}; config has D={D}, H={H}"
        )
    from ..copula import CorrelationMatrix

    R = art.read_correlation(_out(cfg, "copula.bin"))
    rep = meta["repair"]
    corr = CorrelationMatrix(R, rep["min_eigenvalue_before_repair"], rep["jitter"], rep["eigen_clipped"],
                             rep["shrinkage"], rep["n_samples"])
    return make_copula(corr), meta


def run_scenarios(cfg: RunConfig, data: Dataset | None = None, workers=None):
    data = data or load_dataset(cfg)
    model, extra = _load_model(cfg, data)
    mode = cfg["scenarios"]["mode"]
    cop, cop_h = None, None
    if mode == COPULA:
        cop, meta = _load_copula(cfg, model.n_series, model.horizon)
    ctx = _context_from_model(cfg, data, extra)
    fh_ = fit_hash(cfg, data, cfg["model"]["variant"], ctx.index)
    art.check_lineage(extra, {"fit": fh_}, "model.json")
    if mode == COPULA:
        cop_h = copula_hash(cfg, fh_)
        art.check_lineage(meta, {"fit": fh_, "copula": cop_h}, "copula.json")
    seed = derive_seed(cfg.require_seed(), "scenarios", ctx.index, cfg["model"]["variant"])
    origins, q, scen = simulate(cfg, ctx, model, cop, seed, workers or cfg["run"]["workers"])
    levels = QuantileSet(model.levels)
    rows = quantiles_to_rows(origins.tolist(), ctx.capacities.location_ids, q, model.levels)
    art.write_quantile_csv(_out(cfg, "forecasts.csv"), rows, levels.column_names())
    lineage = {"data": data.digest, "fit": fh_}
    art.write_json(_out(cfg, "forecasts.json"), {"lineage": lineage, "units": "MW"})
    _write_scenarios(cfg, _out(cfg, f"scenarios_{mode}"), origins, scen, seed, mode, ctx,
                     {**lineage, "copula": cop_h, "scenarios": scenario_hash(cfg, fh_, cop_h, mode)})
    return origins, q, scen


def _write_scenarios(cfg, stem, origins, scen, seed, mode, ctx, lineage):
    art.write_scenarios(stem + ".bin", origins, scen, seed, mode)
    art.write_json(stem + ".json", {
        "format": "copulacast.scenarios", "version": art.FORMAT_VERSION, "mode": mode, "seed": seed,
        "dims": dict(zip("NSDH", map(int, scen.shape))), "location_ids": list(ctx.capacities.location_ids),
        "capacities": ctx.capacities.values.tolist(), "units": "MW", "lineage": lineage,
    })
    if cfg["scenarios"]["write_csv"]:
        art.write_scenario_csv(stem + ".csv", origins, scen, ctx.capacities.location_ids)


def run_score(cfg: RunConfig, data: Dataset | None = None) -> ScoreReport:
    data = data or load_dataset(cfg)
    mode = cfg["scenarios"]["mode"]
    stem = _out(cfg, f"scenarios_{mode}")
    if not os.path.isfile(stem + ".bin"):
        raise StaleArtifact(f"{stem}.bin missing; run the scenarios stage first")
    meta = art.read_json(stem + ".json")
    fmeta = art.read_json(_out(cfg, "forecasts.json"))
    if meta["lineage"].get("fit") != fmeta["lineage"].get("fit"):
        raise StaleArtifact("scenarios and forecasts come from different model fits (mixed lineage)")
    plan = split_plan(cfg, data)
    k = _resolve_index(cfg["split"]["index"], len(plan))
    expected = {"data": data.digest}
    if cfg.seed is not None:
        expected["fit"] = fit_hash(cfg, data, cfg["model"]["variant"], k)
    art.check_lineage(meta, expected, stem + ".json")
    origins, scen, _, _ = art.read_scenarios(stem + ".bin")
    H = cfg["window"]["horizon"]
    if scen.shape[2:] != (data.panel.n_series, H):
        raise VersionMismatch(f"scenarios have D x H = {scen.shape[2:]}, config expects {(data.panel.n_series, H)}")
    q_origins, q = art.read_quantile_csv(_out(cfg, "forecasts.csv"), meta["location_ids"], H)
    if not np.array_equal(q_origins, origins):
        raise StaleArtifact("forecast and scenario origins differ")
    caps = CapacityVector(meta["location_ids"], np.array(meta["capacities"]))
    report, batch = _score(cfg, data, caps, origins, q, scen, cfg["quantiles"]["levels"])
    art.write_json(_out(cfg, f"scores_{mode}.json"), {**report.to_dict(), "lineage": meta["lineage"]})
    report.write_csv(_out(cfg, f"scores_{mode}.csv"))
    write_lead_time_csv(_out(cfg, "lead_time.csv"), batch)
    return report


# backtest ------------------------------------------------------------------------------

@dataclass
class BacktestResult:
    reports: dict  # (variant, mode) -> ScoreReport
    table: list  # CSV rows

    def value(self, variant, mode, metric):
        return self.reports[(variant, mode)].values[metric]


def comparison_table(reports: dict, variants, modes):
    """Rows are model variants; each metric gets one column per scenario mode."""
    names = list(next(iter(reports.values())).values)
    header = ["model"] + [f"{n}_{MODE_LABELS[m]}" for n in names for m in modes]
    rows = [header]
    for v in variants:
        rows.append([v] + [repr(reports[(v, m)].values[n]) for n in names for m in modes])
    return rows


def run_backtest(cfg: RunConfig, data: Dataset | None = None, workers=None, write=True) -> BacktestResult:
    """Fit, estimate the copula, simulate both modes and score, for every split and variant."""
    data = data or load_dataset(cfg)
    root = cfg.require_seed()
    plan = split_plan(cfg, data)
    n_splits = len(plan) if not cfg["backtest"]["max_splits"] else min(len(plan), cfg["backtest"]["max_splits"])
    variants, modes = cfg["backtest"]["variants"], cfg["backtest"]["modes"]
    workers = workers or cfg["run"]["workers"]
    per = {(v, m): [] for v in variants for m in modes}
    for k in range(n_splits):
        try:
            ctx = prepare_split(cfg, data, k, plan[k])
            for v in variants:
                model = fit_model(cfg, ctx, v, derive_seed(root, "fit", k, v))
                fh_ = fit_hash(cfg, data, v, k)
                cop = estimate_copula(cfg, ctx, model) if COPULA in modes else None
                cop_h = copula_hash(cfg, fh_)
                seed = derive_seed(root, "scenarios", k, v)
                sub = os.path.join("backtest", f"split_{k:03d}", v)
                if write:
                    os.makedirs(_out(cfg, sub), exist_ok=True)
                    with open(_out(cfg, sub, "model.json"), "w") as fh:
                        fh.write(model_to_json(model, lineage={"fit": fh_}))
                    if cop is not None:
                        art.write_correlation(_out(cfg, sub, "copula.bin"), cop.correlation.values)
                        art.write_json(_out(cfg, sub, "copula.json"), {
                            "n_series": model.n_series, "horizon": model.horizon,
                            "repair": cop.correlation.metadata(), "lineage": {"fit": fh_, "copula": cop_h},
                        })
                for m in modes:
                    origins, q, scen = simulate(cfg, ctx, model, cop if m == COPULA else None, seed, workers)
                    report, _ = _score(cfg, data, ctx.capacities, origins, q, scen, model.levels)
                    per[(v, m)].append(report)
                    if write:
                        lin = {"data": data.digest, "fit": fh_, "copula": cop_h if m == COPULA else None,
                               "scenarios": scenario_hash(cfg, fh_, cop_h if m == COPULA else None, m)}
                        _write_scenarios(cfg, _out(cfg, sub, f"scenarios_{m}"), origins, scen, seed, m, ctx, lin)
        except CopulacastError as exc:
            raise _with_split(exc, k)
    reports = {key: merge_reports(rs) for key, rs in per.items()}
    table = comparison_table(reports, variants, modes)
    if write:
        for (v, m), rep in reports.items():
            art.write_json(_out(cfg, "backtest", f"scores_{v}_{m}.json"), rep.to_dict())
            rep.write_csv(_out(cfg, "backtest", f"scores_{v}_{m}.csv"))
        with open(_out(cfg, "backtest", "comparison.csv"), "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(table)
    return BacktestResult(reports, table)
