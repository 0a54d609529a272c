"""CSV / JSON writers and their readers.

Floats are written with ``repr`` so every file parses back to the exact
values that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..change_stats import DetectionRecord

MANIFEST_SCHEMA = "1.0"
STATS_COLUMNS = ("step", "t", "logL", "p", "T", "n_chains", "argmax_k")
TIDY_COLUMNS = ("run", "step", "statistic", "value")
BAND_COLUMNS = ("step", "t", "statistic", "min", "median", "max")
STOP_COLUMNS = ("run", "nu", "tau_s", "tau_c")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, rows)`` with cells parsed to int / float / None / str."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[_parse(c) for c in row] for row in r]
    return header, rows


def state_columns(dim: int) -> list:
    if dim == 3:
        return ["x1", "x2", "theta"]
    return [f"x{i + 1}" for i in range(dim)]


# -- trajectories and observations -------------------------------------------


def write_trajectory(path, states, dt: float) -> Path:
    states = np.atleast_2d(states)
    header = ["step", "t"] + state_columns(states.shape[1])
    rows = ([n, n * dt, *x] for n, x in enumerate(states))
    return write_csv(path, header, rows)


def read_trajectory(path):
    header, rows = read_csv(path)
    a = np.array(rows, dtype=float)
    return a[:, 0].astype(int), a[:, 1], a[:, 2:]


def write_observations(path, Y, indicators, dt: float) -> Path:
    Y = np.atleast_2d(Y)
    m = Y.shape[1]
    header = ["step", "t"] + [f"y{i + 1}" for i in range(m)] + [f"outlier{i + 1}" for i in range(m)]
    out = np.asarray(indicators) != 1.0
    rows = ([n + 1, (n + 1) * dt, *y, *o] for n, (y, o) in enumerate(zip(Y, out)))
    return write_csv(path, header, rows)


def read_observations(path):
    """Return ``(steps, t, Y, outlier_flags)``."""
    header, rows = read_csv(path)
    m = sum(h.startswith("y") for h in header)
    a = np.array(rows, dtype=float)
    return a[:, 0].astype(int), a[:, 1], a[:, 2:2 + m], a[:, 2 + m:].astype(bool)


# -- statistics ----------------------------------------------------------------


def write_stats(path, record: DetectionRecord) -> Path:
    rows = zip(record.steps, record.times, record.log_L, record.p, record.T, record.n_chains, record.argmax_k)
    return write_csv(path, STATS_COLUMNS, rows)


def read_stats(path) -> dict:
    header, rows = read_csv(path)
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    out = {}
    for name, col in zip(header, cols):
        dtype = np.int64 if name in ("step", "n_chains", "argmax_k") else float
        out[name] = np.array(col, dtype=dtype)
    return out


STATISTICS = {"logL": "log_L", "p": "p", "T": "T"}


def write_tidy(path, records: Sequence[DetectionRecord], statistics=("p", "T", "logL")) -> Path:
    def rows():
        for run, rec in enumerate(records):
            for stat in statistics:
                values = getattr(rec, STATISTICS[stat])
                for n, v in zip(rec.steps, values):
                    yield run, int(n), stat, v

    return write_csv(path, TIDY_COLUMNS, rows())


def read_tidy(path):
    return read_csv(path)[1]


def bands(records: Sequence[DetectionRecord], statistic: str):
    """Per-step ``(min, median, max)`` across runs."""
    A = np.vstack([getattr(r, STATISTICS[statistic]) for r in records])
    return A.min(axis=0), np.median(A, axis=0), A.max(axis=0)


def write_bands(path, records: Sequence[DetectionRecord], statistics=("p", "T", "logL")) -> Path:
    rec0 = records[0]

    def rows():
        for stat in statistics:
            lo, med, hi = bands(records, stat)
            for n, t, a, b, c in zip(rec0.steps, rec0.times, lo, med, hi):
                yield int(n), t, stat, a, b, c

    return write_csv(path, BAND_COLUMNS, rows())


def write_stopping_times(path, records: Sequence[DetectionRecord]) -> Path:
    rows = ((i, r.nu, r.tau_s, r.tau_c) for i, r in enumerate(records))
    return write_csv(path, STOP_COLUMNS, rows)


def read_stopping_times(path):
    return read_csv(path)[1]


# -- JSON ----------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, *, command: str, config_hash: str, seed: int, version: str,
                   backend: str, files: Sequence[Path], extra: Optional[dict] = None) -> Path:
    path = Path(path)
    data = {
        "schema_version": MANIFEST_SCHEMA,
        "command": command,
        "config_hash": config_hash,
        "seed": int(seed),
        "version": version,
        "backend": backend,
        "files": {Path(f).name: file_digest(f) for f in files},
    }
    if extra:
        data.update(extra)
    return write_json(path, data)
