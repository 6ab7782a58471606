"""On-disk artifact formats.

Binary files are little-endian.

Correlation matrix (``.bin``)::

    8 bytes   magic b"CCCORR\\x00\\x01"
    uint32    format version
    uint64    d
    float64   d * d values, row-major

Scenario set (``.bin``)::

    8 bytes   magic b"CCSCEN\\x00\\x01"
    uint32    format version
    uint32    N origins, S scenarios, D locations, H steps
    uint64    seed
    uint8     mode (0 marginal-only, 1 copula), then 7 pad bytes
    int64     N origins
    float64   N * S * D * H values, C order over (origin, scenario, location, step)

Every binary has a JSON sidecar (same stem, ``.json``) holding metadata and
lineage: the config hash of the producing stage and of each upstream stage.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct

import numpy as np

from ..copula import COPULA, MARGINAL_ONLY
from ..errors import StaleArtifact, VersionMismatch

CORR_MAGIC = b"CCCORR\x00\x01"
SCEN_MAGIC = b"CCSCEN\x00\x01"
FORMAT_VERSION = 1
_MODES = {MARGINAL_ONLY: 0, COPULA: 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}
_SCEN_HEADER = struct.Struct("<8sIIIIIQB7x")
_CORR_HEADER = struct.Struct("<8sIQ")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def check_lineage(doc: dict, expected: dict, what: str) -> None:
    """Raise :class:`StaleArtifact` unless every expected stage hash matches."""
    have = doc.get("lineage", {})
    for stage, h in expected.items():
        if have.get(stage) != h:
            raise StaleArtifact(
                f"{what} was produced under a different {stage} configuration "
                f"(artifact {have.get(stage)}, current {h}); rerun the {stage} stage"
            )


def write_correlation(path, R: np.ndarray) -> None:
    R = np.ascontiguousarray(R, dtype="<f8")
    d = R.shape[0]
    with open(path, "wb") as fh:
        fh.write(_CORR_HEADER.pack(CORR_MAGIC, FORMAT_VERSION, d))
        fh.write(R.tobytes(order="C"))


def read_correlation(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_CORR_HEADER.size)
        if len(head) < _CORR_HEADER.size:
            raise VersionMismatch(f"{path}: truncated correlation file")
        magic, version, d = _CORR_HEADER.unpack(head)
        if magic != CORR_MAGIC or version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: not a version-{FORMAT_VERSION} correlation file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != d * d:
        raise VersionMismatch(f"{path}: expected {d * d} values, found {data.size}")
    return data.reshape(d, d).astype(float)


def write_scenarios(path, origins, values, seed: int, mode: str) -> None:
    """``values`` is ``(N, S, D, H)``."""
    values = np.ascontiguousarray(values, dtype="<f8")
    N, S, D, H = values.shape
    with open(path, "wb") as fh:
        fh.write(_SCEN_HEADER.pack(SCEN_MAGIC, FORMAT_VERSION, N, S, D, H, int(seed), _MODES[mode]))
        fh.write(np.asarray(origins, dtype="<i8").tobytes())
        fh.write(values.tobytes(order="C"))


def read_scenarios(path):
    """Returns ``(origins, values (N, S, D, H), seed, mode)``."""
    with open(path, "rb") as fh:
        head = fh.read(_SCEN_HEADER.size)
        if len(head) < _SCEN_HEADER.size:
            raise VersionMismatch(f"{path}: truncated scenario file")
        magic, version, N, S, D, H, seed, mode = _SCEN_HEADER.unpack(head)
        if magic != SCEN_MAGIC or version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: not a version-{FORMAT_VERSION} scenario file")
        origins = np.frombuffer(fh.read(8 * N), dtype="<i8").astype(np.int64)
        values = np.frombuffer(fh.read(), dtype="<f8")
    if values.size != N * S * D * H:
        raise VersionMismatch(f"{path}: expected {N * S * D * H} values, found {values.size}")
    return origins, values.reshape(N, S, D, H).astype(float), seed, _MODE_NAMES[mode]


def write_scenario_csv(path, origins, values, location_ids) -> None:
    N, S, D, H = values.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "scenario", "location", "step", "value_mw"])
        for n in range(N):
            for s in range(S):
                for i in range(D):
                    for h in range(H):
                        w.writerow([origins[n], s, location_ids[i], h + 1, repr(float(values[n, s, i, h]))])


def write_quantile_csv(path, rows, column_names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "location", "step", *column_names])
        for row in rows:
            w.writerow([*row[:3], *(repr(float(v)) for v in row[3:])])


def read_quantile_csv(path, location_ids, horizon):
    """Returns ``(origins, quantiles (N, D, H, Q))`` from a quantile export."""
    import pandas as pd

    df = pd.read_csv(path, dtype={"location": str}, float_precision="round_trip")
    qcols = [c for c in df.columns if c not in ("origin", "location", "step")]
    origins = np.unique(df["origin"].to_numpy())
    D = len(location_ids)
    loc_index = {loc: i for i, loc in enumerate(location_ids)}
    out = np.full((len(origins), D, horizon, len(qcols)), np.nan)
    if not df["location"].isin(list(loc_index)).all():
        raise VersionMismatch(f"{path}: unknown location in quantile export")
    o_index = np.searchsorted(origins, df["origin"].to_numpy())
    i_index = df["location"].map(loc_index).to_numpy()
    h_index = df["step"].to_numpy() - 1
    out[o_index, i_index, h_index] = df[qcols].to_numpy(dtype=float)
    if np.isnan(out).any():
        raise VersionMismatch(f"{path}: quantile export does not cover a full origin x location x step grid")
    return origins, out
