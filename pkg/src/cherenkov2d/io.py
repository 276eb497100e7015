"""Plain-text exchange formats.

Tables are CSV files that start with ``# key=value`` metadata lines followed by
a header row and numeric rows. Structured results are JSON with sorted keys.
Nothing time-dependent is written, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import MissingInputError


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path, columns: dict, meta: dict | None = None):
    """Write equally long columns with ``# key=value`` metadata lines on top."""
    path = Path(path)
    names = list(columns)
    data = [np.asarray(columns[n]).ravel() for n in names]
    if len({d.size for d in data}) > 1:
        raise ValueError("columns differ in length")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for key, value in sorted((meta or {}).items()):
            fh.write(f"# {key}={_format(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([_format(v) for v in row])
    return path


def read_table(path):
    """Return ``(columns, meta)``; numeric columns become float arrays."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError([str(path)])
    meta = {}
    body = []
    with path.open() as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, sep, value = s[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = _parse_value(value.strip())
                continue
            body.append(s)
    if not body:
        return {}, meta
    rows = list(csv.reader(body))
    header = rows[0]
    if _is_number(header[0]):
        header = [f"col{i}" for i in range(len(rows[0]))]
    else:
        rows = rows[1:]
    cols = {}
    for i, name in enumerate(header):
        values = [r[i] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in values])
        except ValueError:
            cols[name] = values
    return cols, meta


def _is_number(s) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _parse_value(s):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def write_spectrum(path, energy, values, meta=None, value_name="value"):
    return write_table(path, {"energy_eV": energy, value_name: values}, meta)


def read_spectrum(path):
    """First two columns as ``(energy, values, meta)``."""
    cols, meta = read_table(path)
    names = list(cols)
    if len(names) < 2:
        raise ValueError(f"{path}: need at least two columns")
    return cols[names[0]], cols[names[1]], meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError([str(path)])
    return json.loads(path.read_text())


def complex_matrix_to_json(m):
    """Nested ``[re, im]`` pairs."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def complex_matrix_from_json(data):
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]
