"""File formats: observable CSV series, JSON summaries and plot tables.

All writers go through :func:`atomic_write` (temporary file in the target
directory, then ``os.replace``) so an interrupted run never leaves a
truncated file under the final name.
"""

from __future__ import annotations

import io
import json
import os
import tempfile

import numpy as np

__all__ = [
    "CSV_COLUMNS",
    "CSV_FORMAT",
    "atomic_write",
    "series_table",
    "write_series_csv",
    "read_series_csv",
    "write_json",
    "write_table",
]

CSV_FORMAT = "blochdamp-series v1"
CSV_COLUMNS = (
    "t", "P", "v_mean", "v_mean_err", "z_mean", "z_mean_err",
    "disp", "disp_err", "v2_mean", "v2_mean_err", "norm_mean",
)


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    folder = os.path.dirname(path) or "."
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".part-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def series_table(series) -> np.ndarray:
    """Stack an :class:`ObservableSeries` (or compatible object) into CSV column order."""
    zeros = np.zeros(len(series.t))

    def get(name):
        val = getattr(series, name, None)
        return zeros if val is None else np.asarray(val, dtype=float)

    cols = [get("t"), get("P"), get("v"), get("v_err"), get("z"), get("z_err"),
            get("disp"), get("disp_err"), get("v2"), get("v2_err"), get("norm")]
    return np.column_stack(cols)


def _header_lines(meta: dict) -> list[str]:
    lines = [f"# {CSV_FORMAT}"]
    for key, val in meta.items():
        text = val if isinstance(val, str) else json.dumps(val, sort_keys=True, separators=(",", ":"))
        lines.append(f"# {key}={text}")
    return lines


def write_series_csv(path, series, meta: dict) -> None:
    """CSV with ``# key=value`` metadata lines, a column header, then rows.

    Floats are written with ``repr`` precision so files round-trip exactly.
    """
    table = series_table(series)
    buf = io.StringIO()
    buf.write("\n".join(_header_lines(meta)) + "\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in table:
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    atomic_write(path, buf.getvalue())


def read_series_csv(path):
    """Return ``(columns, meta)``: a dict of column arrays and the header metadata."""
    meta = {}
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != f"# {CSV_FORMAT}":
            raise ValueError(f"{path}: not a {CSV_FORMAT} file")
        line = fh.readline()
        while line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
            line = fh.readline()
        names = line.strip().split(",")
        if tuple(names) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {names}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, i] for i, name in enumerate(names)}, meta


def write_json(path, payload: dict) -> None:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_table(path, columns: dict, meta: dict | None = None) -> None:
    """Whitespace-separated table with a ``#`` header naming the columns."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    buf = io.StringIO()
    for line in _header_lines(meta or {})[1:]:
        buf.write(line + "\n")
    buf.write("# " + " ".join(names) + "\n")
    for row in data:
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    atomic_write(path, buf.getvalue())
