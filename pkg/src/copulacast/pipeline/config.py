"""Run configuration.

A config is a TOML file with the sections below; every key is optional
except ``data.targets`` (for commands that read data). Unknown sections or
keys are rejected. Relative paths resolve against the config file's
directory. ``--set section.key=value`` overrides parse their value as a TOML
literal, falling back to a bare string.

Seeds: the root seed (``run.seed``, usually from ``--seed``) is split per
stage with :func:`derive_seed`, the first 8 bytes (little-endian) of
``sha256("<root>/<label>/<label>...")``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError
from ..marginals.quantile import DEFAULT_LEVELS, VARIANTS
from ..metrics import METRIC_GROUPS, METRIC_NAMES, VARIOGRAM_FORMS

logger = logging.getLogger(__name__)

DEFAULTS = {
    "data": {
        "targets": None,
        "covariates": None,
        "capacities": None,
        "covariate_step_hours": 1,
        "time_encodings": False,
        "ffill": False,
    },
    "window": {"past": 24, "horizon": 48},
    "model": {
        "variant": "nlinear",
        "epochs": 20,
        "learning_rate": 0.005,
        "batch_size": 64,
        "kernel": 7,
        "sharing": "joint",
        "init": "lstsq",
        "ridge": 1e-3,
        "use_covariates": True,
        "tails": "extrapolate",
    },
    "quantiles": {"levels": list(DEFAULT_LEVELS)},
    "copula": {"stride": 1, "shrinkage": 0.0, "clamp": 1e-6},
    "scenarios": {"n_scenarios": 200, "mode": "copula", "write_csv": True},
    "metrics": {"which": ["nmae", "rmse", "ed", "vs"], "p": 0.5, "variogram_form": "difference"},
    "split": {
        "policy": "fractional",
        "train": 0.7,
        "validation": 0.1,
        "test": 0.2,
        "min_train_days": 365,
        "validation_days": 7,
        "test_days": 7,
        "index": -1,
        "origin_stride": 1,
    },
    "run": {"seed": None, "output_dir": "out", "workers": 0},
    "synth": {
        "n_series": 5,
        "n_times": 2000,
        "phi": 0.8,
        "rho": 0.5,
        "sigma": 0.1,
        "amplitude": 0.3,
        "level": 1.0,
        "covariate_share": 0.5,
        "start": "2020-01-01T00:00:00",
    },
    "backtest": {"variants": ["nlinear"], "modes": ["marginal", "copula"], "max_splits": 0},
}

PATH_KEYS = {("data", "targets"), ("data", "covariates"), ("data", "capacities"), ("run", "output_dir")}
DATA_FILES = (("data", "targets"), ("data", "covariates"), ("data", "capacities"))


def derive_seed(root: int, *labels) -> int:
    text = "/".join([str(int(root)), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _fail(key, reason):
    raise ConfigError(f"{key}: {reason}")


def _int(key, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(key, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        _fail(key, f"must be >= {minimum}, got {v}")
    return v


def _num(key, v, lo=None, hi=None, open_lo=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(key, f"expected a number, got {v!r}")
    v = float(v)
    if lo is not None and (v < lo or (open_lo and v == lo)):
        _fail(key, f"must be {'>' if open_lo else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(key, f"must be <= {hi}, got {v}")
    return v


def _bool(key, v):
    if not isinstance(v, bool):
        _fail(key, f"expected true or false, got {v!r}")
    return v


def _choice(key, v, options):
    if v not in options:
        _fail(key, f"must be one of {list(options)}, got {v!r}")
    return v


def _validate(c):
    d = c["data"]
    for k in ("time_encodings", "ffill"):
        _bool(f"data.{k}", d[k])
    _int("data.covariate_step_hours", d["covariate_step_hours"], 1)
    w = c["window"]
    _int("window.past", w["past"], 1)
    _int("window.horizon", w["horizon"], 1)

    m = c["model"]
    _choice("model.variant", m["variant"], VARIANTS)
    _int("model.epochs", m["epochs"], 0)
    _num("model.learning_rate", m["learning_rate"], 0.0, open_lo=True)
    _int("model.batch_size", m["batch_size"], 1)
    k = _int("model.kernel", m["kernel"], 1)
    if k % 2 == 0 or k > w["past"]:
        _fail("model.kernel", f"must be odd and at most window.past={w['past']}, got {k}")
    _choice("model.sharing", m["sharing"], ("joint", "per_series"))
    _choice("model.init", m["init"], ("lstsq", "zeros"))
    _num("model.ridge", m["ridge"], 0.0)
    _bool("model.use_covariates", m["use_covariates"])
    _choice("model.tails", m["tails"], ("support", "extrapolate"))

    lv = c["quantiles"]["levels"]
    if not isinstance(lv, list) or not lv:
        _fail("quantiles.levels", "expected a nonempty list")
    lv = [_num("quantiles.levels", q, 0.0, 1.0, open_lo=True) for q in lv]
    if lv[-1] >= 1.0 or any(b <= a for a, b in zip(lv, lv[1:])):
        _fail("quantiles.levels", f"must be strictly increasing inside (0, 1), got {lv}")
    c["quantiles"]["levels"] = lv

    cp = c["copula"]
    _int("copula.stride", cp["stride"], 1)
    cp["shrinkage"] = _num("copula.shrinkage", cp["shrinkage"], 0.0, 1.0)
    cp["clamp"] = _num("copula.clamp", cp["clamp"], 0.0, 0.5, open_lo=True)

    s = c["scenarios"]
    _int("scenarios.n_scenarios", s["n_scenarios"], 1)
    _choice("scenarios.mode", s["mode"], ("marginal", "copula"))
    _bool("scenarios.write_csv", s["write_csv"])

    mt = c["metrics"]
    if not isinstance(mt["which"], list):
        _fail("metrics.which", "expected a list of metric names")
    for name in mt["which"]:
        if name not in METRIC_NAMES and name not in METRIC_GROUPS:
            _fail("metrics.which", f"unknown metric {name!r}")
    mt["p"] = _num("metrics.p", mt["p"], 0.0, open_lo=True)
    _choice("metrics.variogram_form", mt["variogram_form"], VARIOGRAM_FORMS)

    sp = c["split"]
    _choice("split.policy", sp["policy"], ("fractional", "monthly"))
    fr = [_num(f"split.{k}", sp[k], 0.0, 1.0) for k in ("train", "validation", "test")]
    if sp["policy"] == "fractional" and (fr[0] <= 0 or fr[2] <= 0 or abs(sum(fr) - 1.0) > 1e-9):
        _fail("split", f"fractions train/validation/test must be positive (validation may be 0) and sum to 1, got {fr}")
    for k in ("min_train_days", "validation_days", "test_days"):
        _int(f"split.{k}", sp[k], 0)
    _int("split.index", sp["index"])
    _int("split.origin_stride", sp["origin_stride"], 1)

    r = c["run"]
    if r["seed"] is not None:
        _int("run.seed", r["seed"], 0)
    _int("run.workers", r["workers"], 0)

    sy = c["synth"]
    _int("synth.n_series", sy["n_series"], 1)
    _int("synth.n_times", sy["n_times"], 2)
    sy["phi"] = _num("synth.phi", sy["phi"], -1.0, 1.0)
    if abs(sy["phi"]) >= 1:
        _fail("synth.phi", "must lie strictly inside (-1, 1)")
    sy["rho"] = _num("synth.rho", sy["rho"], -1.0, 1.0)
    for k in ("sigma", "amplitude"):
        sy[k] = _num(f"synth.{k}", sy[k], 0.0)
    sy["level"] = _num("synth.level", sy["level"])
    sy["covariate_share"] = _num("synth.covariate_share", sy["covariate_share"], 0.0, 1.0)

    b = c["backtest"]
    if not b["variants"] or not all(v in VARIANTS for v in b["variants"]):
        _fail("backtest.variants", f"must be a nonempty subset of {list(VARIANTS)}")
    if not b["modes"] or not all(v in ("marginal", "copula") for v in b["modes"]):
        _fail("backtest.modes", "must be a nonempty subset of ['marginal', 'copula']")
    _int("backtest.max_splits", b["max_splits"], 0)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` holds every section with defaults filled in."""

    values: dict
    path: str | None = None

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("run.seed: a seed is required (pass --seed)")
        return self.seed

    @property
    def output_dir(self):
        return self.values["run"]["output_dir"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def echo(self) -> str:
        return json.dumps(self.values, indent=1, sort_keys=True)

    def section_hash(self, *sections, extra=None) -> str:
        doc = {s: self.values[s] for s in sections}
        if extra is not None:
            doc["_extra"] = extra
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _parse_literal(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``section.key=value`` override to a raw config dict in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r}: expected section.key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override {assignment!r}: key must look like section.key")
    section, name = parts
    raw.setdefault(section, {})[name] = _parse_literal(text.strip())


def build_config(raw: dict, base_dir: str = ".", path=None, overrides=(), check_files=True, seed=None) -> RunConfig:
    """Validate a raw mapping into a :class:`RunConfig`."""
    raw = copy.deepcopy(raw)
    for assignment in overrides:
        apply_override(raw, assignment)
    if seed is not None:
        raw.setdefault("run", {})["seed"] = seed
    values = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            values[section][key] = value
    _validate(values)
    for section, key in PATH_KEYS:
        v = values[section][key]
        if v is None:
            continue
        if not isinstance(v, str):
            raise ConfigError(f"{section}.{key}: expected a path string")
        values[section][key] = os.path.normpath(os.path.join(base_dir, v))
    if check_files:
        if values["data"]["targets"] is None:
            raise ConfigError("data.targets: required")
        for section, key in DATA_FILES:
            v = values[section][key]
            if v is not None and not os.path.isfile(v):
                raise ConfigError(f"{section}.{key}: file not found: {v}")
    return RunConfig(values, None if path is None else str(path))


def parse_config(path, overrides=(), check_files=True, seed=None) -> RunConfig:
    """Read, merge defaults into, and validate a TOML config file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    base = os.path.dirname(os.path.abspath(path))
    cfg = build_config(raw, base, path, overrides, check_files, seed)
    logger.info("configuration:\n%s", cfg.echo())
    return cfg
