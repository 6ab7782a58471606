"""Panels of hourly observations, covariates, capacities and rolling windows.

Panels are stored location-major: ``values[i, t]`` is series ``i`` at hour
``t``. Window origins use 0-based indexing where origin ``t`` owns the past
slice ``[t - W, t)`` and the future slice ``[t, t + H)``, so the feasible
origins of a length-``T`` panel are ``W, ..., T - H``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AllZeroSeries,
    DataError,
    GapInHourlyGrid,
    GridNotCovering,
    MissingColumn,
    MissingValue,
    NonMonotonicTimestamps,
    NonNumericCell,
    RangeTooShort,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

HOUR = np.timedelta64(1, "h")
MAX_FFILL_HOURS = 3


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SeriesPanel:
    """D x T target observations on a strict hourly grid."""

    location_ids: tuple
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location_ids", tuple(str(i) for i in self.location_ids))
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, "datetime64[s]"))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ShapeMismatch(f"panel values must be D x T with D, T >= 1, got {self.values.shape}")
        if self.values.shape != (len(self.location_ids), len(self.timestamps)):
            raise ShapeMismatch(
                f"values shape {self.values.shape} does not match "
                f"{len(self.location_ids)} ids x {len(self.timestamps)} timestamps"
            )
        if not np.isfinite(self.values).all():
            raise NonNumericCell("panel contains NaN or infinite values")
        _check_grid(self.timestamps, HOUR)

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "SeriesPanel":
        return SeriesPanel(self.location_ids, self.timestamps, values)


@dataclass(frozen=True)
class CovariatePanel:
    """D' x T covariates. The step is hourly once aligned to a target panel."""

    covariate_ids: tuple
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "covariate_ids", tuple(str(i) for i in self.covariate_ids))
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, "datetime64[s]"))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2 and values.shape[0] == 0:
            values = values.reshape(0, len(self.timestamps))
        object.__setattr__(self, "values", _frozen(values))
        if self.values.shape != (len(self.covariate_ids), len(self.timestamps)):
            raise ShapeMismatch(
                f"values shape {self.values.shape} does not match "
                f"{len(self.covariate_ids)} ids x {len(self.timestamps)} timestamps"
            )
        if not np.isfinite(self.values).all():
            raise NonNumericCell("covariate panel contains NaN or infinite values")
        if len(self.timestamps) > 1 and not (np.diff(self.timestamps) > np.timedelta64(0, "s")).all():
            raise NonMonotonicTimestamps("covariate timestamps must be strictly increasing")

    @property
    def n_covariates(self) -> int:
        return self.values.shape[0]

    @classmethod
    def empty(cls, timestamps) -> "CovariatePanel":
        return cls((), timestamps, np.zeros((0, len(timestamps))))

    def stack(self, other: "CovariatePanel") -> "CovariatePanel":
        if not np.array_equal(self.timestamps, other.timestamps):
            raise ShapeMismatch("cannot stack covariate panels on different grids")
        return CovariatePanel(
            self.covariate_ids + other.covariate_ids,
            self.timestamps,
            np.vstack([self.values, other.values]),
        )


@dataclass(frozen=True)
class CapacityVector:
    location_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location_ids", tuple(str(i) for i in self.location_ids))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (len(self.location_ids),):
            raise ShapeMismatch("one capacity per location required")
        if not (np.isfinite(self.values).all() and (self.values > 0).all()):
            raise DataError(f"capacities must be positive and finite: {self.values}")


@dataclass(frozen=True)
class WindowSpec:
    past: int
    horizon: int

    def __post_init__(self):
        if int(self.past) < 1 or int(self.horizon) < 1:
            raise DataError(f"window lengths must be >= 1, got W={self.past}, H={self.horizon}")


@dataclass(frozen=True)
class ForecastWindow:
    origin: int
    past_targets: np.ndarray
    past_covariates: np.ndarray
    future_covariates: np.ndarray
    future_targets: np.ndarray | None = None


@dataclass(frozen=True)
class WindowBatch(Sequence):
    """Stacked windows; behaves as a sequence of :class:`ForecastWindow`.

    Arrays are ``(N, D, W)``, ``(N, D', W)``, ``(N, D', H)`` and ``(N, D, H)``.
    """

    origins: np.ndarray
    past_targets: np.ndarray
    past_covariates: np.ndarray
    future_covariates: np.ndarray
    future_targets: np.ndarray | None = None
    timestamps: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.origins)

    def __getitem__(self, n):
        if isinstance(n, slice):
            return self.subset(np.arange(len(self))[n])
        return ForecastWindow(
            int(self.origins[n]),
            self.past_targets[n],
            self.past_covariates[n],
            self.future_covariates[n],
            None if self.future_targets is None else self.future_targets[n],
        )

    def __iter__(self) -> Iterator[ForecastWindow]:
        for n in range(len(self)):
            yield self[n]

    def subset(self, index) -> "WindowBatch":
        index = np.asarray(index)
        return WindowBatch(
            self.origins[index],
            self.past_targets[index],
            self.past_covariates[index],
            self.future_covariates[index],
            None if self.future_targets is None else self.future_targets[index],
            None if self.timestamps is None else self.timestamps[index],
        )

    @property
    def shape(self):
        """(D, D', W, H)."""
        _, d, w = self.past_targets.shape
        return d, self.past_covariates.shape[1], w, self.future_covariates.shape[2]

    @classmethod
    def from_windows(cls, windows: Sequence[ForecastWindow]) -> "WindowBatch":
        if isinstance(windows, WindowBatch):
            return windows
        if not windows:
            raise RangeTooShort("no windows to stack")
        has_targets = all(w.future_targets is not None for w in windows)
        try:
            return cls(
                np.array([w.origin for w in windows]),
                np.stack([w.past_targets for w in windows]),
                np.stack([w.past_covariates for w in windows]),
                np.stack([w.future_covariates for w in windows]),
                np.stack([w.future_targets for w in windows]) if has_targets else None,
            )
        except ValueError as exc:
            raise ShapeMismatch(f"windows do not share one shape: {exc}") from None


def _check_grid(timestamps, step, what="timestamps"):
    if len(timestamps) < 2:
        return
    diffs = np.diff(timestamps)
    bad = np.flatnonzero(diffs <= np.timedelta64(0, "s"))
    if bad.size:
        raise NonMonotonicTimestamps(
            f"{what} not strictly increasing at row {bad[0] + 1} ({timestamps[bad[0] + 1]})"
        )
    bad = np.flatnonzero(diffs != step)
    if bad.size:
        raise GapInHourlyGrid(
            f"{what} step is {diffs[bad[0]].astype('timedelta64[m]')} between rows "
            f"{bad[0]} and {bad[0] + 1} ({timestamps[bad[0]]} -> {timestamps[bad[0] + 1]}), "
            f"expected {step.astype('timedelta64[m]')}"
        )


def _parse_timestamps(column: pd.Series) -> np.ndarray:
    parsed = pd.to_datetime(column, errors="coerce", utc=True, format="ISO8601")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        raise NonNumericCell(f"row {bad[0] + 1}: unparseable timestamp {column.iloc[bad[0]]!r}")
    return parsed.dt.tz_localize(None).to_numpy().astype("datetime64[s]")


def _forward_fill(values: np.ndarray, names, limit: int) -> np.ndarray:
    values = values.copy()
    for j, name in enumerate(names):
        col = values[:, j]
        run = 0
        for t in range(len(col)):
            if np.isnan(col[t]):
                run += 1
                if t == 0 or run > limit:
                    raise MissingValue(
                        f"column {name!r}: cannot forward-fill row {t + 1} "
                        f"({run} consecutive missing hours, limit {limit})"
                    )
                col[t] = col[t - 1]
            else:
                run = 0
    return values


def load_panel_csv(
    path,
    kind: str = "series",
    *,
    columns: Sequence[str] | None = None,
    step_hours: int = 1,
    ffill: bool = False,
    time_encodings: bool = False,
):
    """Read ``timestamp,<id1>,<id2>,...`` into a validated panel.

    ``kind`` is ``"series"`` (targets, hourly grid enforced) or
    ``"covariate"`` (``step_hours`` may be coarser, e.g. 6 for raw NWP
    output). Missing cells are rejected unless ``ffill`` is set, in which
    case runs of at most three hours are forward-filled.
    """
    if kind not in ("series", "covariate"):
        raise ValueError(f"unknown panel kind {kind!r}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    if frame.shape[1] < 2 or frame.columns[0].strip().lower() != "timestamp":
        raise MissingColumn(f"{path}: first column must be 'timestamp', got {list(frame.columns[:1])}")
    names = [c.strip() for c in frame.columns[1:]]
    if columns is not None:
        missing = [c for c in columns if c not in names]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}")
        keep = [0] + [1 + names.index(c) for c in columns]
        frame = frame.iloc[:, keep]
        names = list(columns)
    if frame.empty:
        raise DataError(f"{path}: no data rows")

    stamps = _parse_timestamps(frame.iloc[:, 0])
    raw = frame.iloc[:, 1:]
    blank = raw.apply(lambda c: c.str.strip() == "").to_numpy()
    cells = np.where(blank, "nan", raw.to_numpy(dtype=str))
    try:
        # numpy's string parser round-trips repr() output exactly
        numeric = cells.astype(float)
    except ValueError:
        numeric = raw.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(np.isnan(numeric) & ~blank)
    if bad.size:
        r, c = bad[0]
        raise NonNumericCell(f"{path}: row {r + 1}, column {names[c]!r}: {raw.iat[r, c]!r} is not a number")
    bad = np.argwhere(np.isinf(numeric))
    if bad.size:
        r, c = bad[0]
        raise NonNumericCell(f"{path}: row {r + 1}, column {names[c]!r}: infinite value")

    order = np.argsort(stamps, kind="stable")
    stamps, numeric, blank = stamps[order], numeric[order], blank[order]
    dup = np.flatnonzero(np.diff(stamps) == np.timedelta64(0, "s"))
    if dup.size:
        raise NonMonotonicTimestamps(f"{path}: timestamp {stamps[dup[0]]} repeated")
    _check_grid(stamps, np.timedelta64(step_hours, "h"), what=f"{path} timestamps")

    if blank.any():
        if not ffill:
            r, c = np.argwhere(blank)[0]
            raise MissingValue(f"{path}: row {order[r] + 1}, column {names[c]!r} is empty")
        numeric = _forward_fill(numeric, names, MAX_FFILL_HOURS)

    if kind == "series":
        return SeriesPanel(names, stamps, numeric.T)
    panel = CovariatePanel(names, stamps, numeric.T)
    if time_encodings:
        panel = panel.stack(time_encoding_panel(stamps))
    return panel


def time_encoding_panel(timestamps) -> CovariatePanel:
    """Hour-of-day and day-of-week as sin/cos pairs."""
    stamps = np.asarray(timestamps, dtype="datetime64[s]")
    hours = stamps.astype("datetime64[h]").astype(np.int64)
    hod = 2 * np.pi * (hours % 24) / 24.0
    # 1970-01-01 was a Thursday; shift so Monday = 0
    dow = 2 * np.pi * (((hours // 24) + 3) % 7) / 7.0
    return CovariatePanel(
        ("hod_sin", "hod_cos", "dow_sin", "dow_cos"),
        stamps,
        np.vstack([np.sin(hod), np.cos(hod), np.sin(dow), np.cos(dow)]),
    )


def load_capacities_csv(path) -> dict:
    frame = pd.read_csv(path, dtype={"location_id": str})
    for col in ("location_id", "capacity_mw"):
        if col not in frame.columns:
            raise MissingColumn(f"{path}: missing column {col!r}")
    caps = pd.to_numeric(frame["capacity_mw"], errors="coerce")
    if caps.isna().any():
        r = int(np.flatnonzero(caps.isna().to_numpy())[0])
        raise NonNumericCell(f"{path}: row {r + 1}: capacity {frame['capacity_mw'].iloc[r]!r} is not a number")
    return dict(zip(frame["location_id"].astype(str).str.strip(), caps.astype(float)))


def write_panel_csv(path, panel) -> None:
    ids = panel.location_ids if isinstance(panel, SeriesPanel) else panel.covariate_ids
    frame = pd.DataFrame(panel.values.T, columns=list(ids))
    frame.insert(0, "timestamp", pd.to_datetime(panel.timestamps).strftime("%Y-%m-%dT%H:%M:%S"))
    frame.to_csv(path, index=False, float_format="%.17g")


def interpolate_covariates(raw: CovariatePanel, target_grid) -> CovariatePanel:
    """Piecewise-linear interpolation of a coarse covariate panel onto ``target_grid``.

    Values outside the raw coverage are held at the nearest endpoint, but
    only for at most one coarse step; anything further is an error.
    """
    grid = np.asarray(target_grid, dtype="datetime64[s]")
    src = raw.timestamps
    if len(src) == 0:
        raise GridNotCovering("raw covariate panel is empty")
    xp = src.astype(np.int64).astype(float)
    x = grid.astype(np.int64).astype(float)
    coarse = float(np.min(np.diff(xp))) if len(xp) > 1 else 0.0
    if len(x) and (x[0] < xp[0] - coarse or x[-1] > xp[-1] + coarse):
        raise GridNotCovering(
            f"target grid {grid[0]} .. {grid[-1]} extends more than one coarse step "
            f"beyond covariate data {src[0]} .. {src[-1]}"
        )
    out = np.empty((raw.n_covariates, len(x)))
    for j in range(raw.n_covariates):
        out[j] = np.interp(x, xp, raw.values[j])
    return CovariatePanel(raw.covariate_ids, grid, out)


def _train_mask(panel: SeriesPanel, train_end) -> np.ndarray:
    if train_end is None:
        return np.ones(panel.n_times, dtype=bool)
    if isinstance(train_end, (int, np.integer)):
        mask = np.arange(panel.n_times) < int(train_end)
    else:
        end = np.datetime64(train_end, "s")
        if end <= panel.timestamps[0]:
            raise DataError(f"train_end {end} precedes panel start {panel.timestamps[0]}")
        mask = panel.timestamps < end
    return mask


def derive_capacity(
    panel: SeriesPanel, train_end=None, overrides: Mapping[str, float] | None = None
) -> CapacityVector:
    """Per-series capacity: the training maximum unless overridden.

    ``train_end`` is exclusive and may be an index or a timestamp; ``None``
    uses the whole panel.
    """
    overrides = dict(overrides or {})
    mask = _train_mask(panel, train_end)
    caps = []
    for i, loc in enumerate(panel.location_ids):
        if loc in overrides:
            caps.append(float(overrides[loc]))
            continue
        train = panel.values[i, mask]
        top = train.max() if train.size else -np.inf
        if not top > 0:
            raise AllZeroSeries(f"series {loc!r} has no positive observation in the training slice")
        caps.append(float(top))
    return CapacityVector(panel.location_ids, np.array(caps))


def normalize(panel: SeriesPanel, cap: CapacityVector) -> SeriesPanel:
    """Convert MW to capacity factors, clamping values above capacity to 1."""
    if cap.location_ids != panel.location_ids:
        raise ShapeMismatch("capacity vector locations do not match the panel")
    out = panel.values / cap.values[:, None]
    over = out > 1.0
    if over.any():
        logger.warning("clamped %d value(s) above capacity to capacity factor 1", int(over.sum()))
        out = np.where(over, 1.0, out)
    return panel.with_values(out)


def denormalize(panel: SeriesPanel, cap: CapacityVector) -> SeriesPanel:
    return panel.with_values(panel.values * cap.values[:, None])


def feasible_origins(n_times: int, spec: WindowSpec) -> range:
    return range(spec.past, n_times - spec.horizon + 1)


def build_windows(
    panel: SeriesPanel,
    covs: CovariatePanel | None,
    spec: WindowSpec,
    origin_range: tuple | None = None,
    stride: int = 1,
    *,
    require_targets: bool = True,
) -> WindowBatch:
    """Rolling windows at origins ``start, start + stride, ..., <= stop``.

    ``origin_range`` is an inclusive ``(start, stop)`` pair of origins and
    defaults to every feasible origin. With ``require_targets=False`` origins
    may run past ``T - H`` as long as the covariates cover the horizon; such
    windows carry no future targets.
    """
    if stride < 1:
        raise DataError(f"stride must be positive, got {stride}")
    W, H = spec.past, spec.horizon
    T = panel.n_times
    if covs is None:
        covs = CovariatePanel.empty(panel.timestamps)
    if covs.values.shape[1] < T or not np.array_equal(covs.timestamps[:T], panel.timestamps):
        raise ShapeMismatch("covariates must share the target panel's timestamp grid")
    last = T - H if require_targets else min(T, covs.values.shape[1] - H)
    start, stop = origin_range if origin_range is not None else (W, last)
    start, stop = max(int(start), W), min(int(stop), last)
    if stop < start:
        raise RangeTooShort(
            f"no feasible origin: T={T}, W={W}, H={H}, requested range {origin_range}"
        )
    origins = np.arange(start, stop + 1, stride)
    z = panel.values
    x = covs.values
    past_idx = origins[:, None] + np.arange(-W, 0)[None, :]
    fut_idx = origins[:, None] + np.arange(H)[None, :]
    past_targets = np.moveaxis(z[:, past_idx], 0, 1)
    past_covs = np.moveaxis(x[:, past_idx], 0, 1)
    fut_covs = np.moveaxis(x[:, fut_idx], 0, 1)
    future = None
    if stop + H <= T:
        future = np.moveaxis(z[:, fut_idx], 0, 1)
    elif require_targets:
        raise RangeTooShort("targets required beyond the end of the panel")
    stamps = covs.timestamps[np.minimum(origins, covs.values.shape[1] - 1)]
    return WindowBatch(origins, past_targets, past_covs, fut_covs, future, stamps)
