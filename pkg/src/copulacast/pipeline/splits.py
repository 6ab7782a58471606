"""Train/validation/test split plans over an hourly timestamp grid.

Ranges are half-open index pairs ``(start, stop)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientData

DAY = np.timedelta64(24 * 3600, "s")


@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple

    def __post_init__(self):
        t, v, s = self.train, self.validation, self.test
        if not (t[0] <= t[1] <= v[0] <= v[1] <= s[0] <= s[1]):
            raise ValueError(f"split ranges must be ordered and disjoint: {t}, {v}, {s}")


@dataclass(frozen=True)
class SplitPlan:
    splits: tuple
    policy: str

    def __len__(self):
        return len(self.splits)

    def __getitem__(self, i):
        return self.splits[i]

    def __iter__(self):
        return iter(self.splits)


def _fractional(T, train, validation, test):
    n_train = int(np.floor(T * train + 1e-9))
    n_val = int(np.floor(T * validation + 1e-9))
    return [Split((0, n_train), (n_train, n_train + n_val), (n_train + n_val, T))]


def _monthly(timestamps, min_train_days, validation_days, test_days):
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    first = ts[0].astype("datetime64[M]")
    last = ts[-1].astype("datetime64[M]")
    out = []
    for month in np.arange(first, last + 1):
        start = month.astype("datetime64[s]")
        if start - ts[0] < min_train_days * DAY:
            continue
        end = start + (validation_days + test_days) * DAY
        if ts[-1] < end - np.timedelta64(3600, "s"):
            continue  # test period not fully observed
        m0, m1, m2 = (int(np.searchsorted(ts, x)) for x in (start, start + validation_days * DAY, end))
        out.append(Split((0, m0), (m0, m1), (m1, m2)))
    return out


def make_split_plan(timestamps, policy="fractional", *, past=24, horizon=48, train=0.7, validation=0.1,
                    test=0.2, min_train_days=365, validation_days=7, test_days=7) -> SplitPlan:
    """Split plan under the ``"monthly"`` or ``"fractional"`` policy.

    Monthly: for each calendar month starting at least ``min_train_days``
    after the first timestamp, train on everything before the month, validate
    on its first ``validation_days`` and test on the following ``test_days``.
    Every train range must hold at least ``past + horizon + 1`` points and
    every test range at least ``horizon`` points.
    """
    T = len(timestamps)
    if policy == "fractional":
        splits = _fractional(T, train, validation, test)
    elif policy == "monthly":
        splits = _monthly(timestamps, min_train_days, validation_days, test_days)
    else:
        raise ValueError(f"unknown split policy {policy!r}")
    need = past + horizon + 1
    if not splits:
        raise InsufficientData(f"{policy} policy yields no split on {T} points")
    for s in splits:
        if s.train[1] - s.train[0] < need:
            raise InsufficientData(f"train range {s.train} has fewer than W+H+1={need} points")
        if s.test[1] - s.test[0] < horizon:
            raise InsufficientData(f"test range {s.test} is shorter than the horizon {horizon}")
    return SplitPlan(tuple(splits), policy)
