"""CSV and JSON artifact formats shared by the CLI and the tests.

All writers format floats with repr() and JSON with sorted keys so that
identical inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .pwl import StateSpace
from .sysid import TimeSeriesDataset

#: maximum spread tolerated between sample intervals when inferring dt
_DT_UNIFORM_TOL = 1e-9


def write_csv(path, header: list[str], columns: list[np.ndarray]):
    if len(header) != len(columns):
        raise ValidationError("header/column count mismatch")
    n = len(columns[0])
    if any(len(c) != n for c in columns):
        raise ValidationError("columns must share their length")
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(repr(float(c[i])) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path, expected_header: list[str] | None = None):
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ValidationError(f"empty CSV: {path}")
    header = lines[0].split(",")
    if expected_header is not None and header != expected_header:
        raise ValidationError(f"{path}: expected header {expected_header}, got {header}")
    try:
        data = np.array([[float(tok) for tok in line.split(",")] for line in lines[1:]])
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric CSV payload") from exc
    return header, data


DATASET_HEADER = ["t", "dp", "dq", "df", "dv"]
TRACES_HEADER = ["t", "df", "dfdot", "dv", "dp", "dq"]


def write_dataset(path, ds: TimeSeriesDataset):
    t = np.arange(ds.n_samples) * ds.dt
    write_csv(path, DATASET_HEADER, [t, ds.u[:, 0], ds.u[:, 1], ds.y[:, 0], ds.y[:, 1]])


def read_dataset(path) -> TimeSeriesDataset:
    _, data = read_csv(path, DATASET_HEADER)
    t = data[:, 0]
    gaps = np.diff(t)
    if len(gaps) == 0:
        raise ValidationError(f"{path}: need more than one sample")
    dt = float(np.mean(gaps))
    if np.max(np.abs(gaps - dt)) > _DT_UNIFORM_TOL:
        raise ValidationError(f"{path}: sample times are not uniform")
    return TimeSeriesDataset(dt=dt, u=data[:, 1:3], y=data[:, 3:5])


def write_model(path, sys: StateSpace):
    record = {
        "n": sys.n_states,
        "m": sys.n_inputs,
        "p": sys.n_outputs,
        "A": [[float(v) for v in row] for row in sys.a],
        "B": [[float(v) for v in row] for row in sys.b],
        "C": [[float(v) for v in row] for row in sys.c],
    }
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")


def read_model(path) -> StateSpace:
    try:
        record = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: bad JSON") from exc
    try:
        n, m, p = record["n"], record["m"], record["p"]
        a = np.array(record["A"], dtype=float).reshape(n, n)
        b = np.array(record["B"], dtype=float).reshape(n, m)
        c = np.array(record["C"], dtype=float).reshape(p, n)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed model record") from exc
    return StateSpace(a, b, c)


def write_record(path, record: dict):
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")


def write_tf_records(path, records: dict):
    """Nested {name: {num: [...], den: [...]}} transfer-function records."""
    Path(path).write_text(json.dumps(records, sort_keys=True, indent=1) + "\n")


def bode_columns(sys: StateSpace, omegas: np.ndarray):
    """Magnitude (dB) and phase (deg) columns per matrix entry on a grid."""
    from .pwl import freq_response

    resp = freq_response(sys, omegas)
    header = ["omega_rad_s"]
    cols = [omegas]
    for i in range(sys.n_outputs):
        for j in range(sys.n_inputs):
            entry = resp[:, i, j]
            mag = np.abs(entry)
            mag_db = 20.0 * np.log10(np.maximum(mag, 1e-300))
            header.append(f"mag{i + 1}{j + 1}_db")
            cols.append(mag_db)
            header.append(f"phase{i + 1}{j + 1}_deg")
            cols.append(np.degrees(np.unwrap(np.angle(entry))))
    return header, cols
