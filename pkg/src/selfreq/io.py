"""CSV readers and writers for datasets and result tables."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .forest import Dataset


def fmt(value) -> str:
    """Render a cell: floats with 6 significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return f"{float(value):.6g}"
    return str(value)


def read_dataset(path, header: bool = False) -> Dataset:
    """Label in the first column, features after it."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise ValueError(f"{path}: need a label column and at least one feature column")
    for i, r in enumerate(rows, start=2 if header else 1):
        if len(r) != width:
            raise ValueError(f"{path}:{i}: expected {width} columns, got {len(r)}")
    try:
        arr = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc} (use --header if the file has a header row)") from None
    return Dataset(arr[:, 1:], arr[:, 0].astype(int))


def write_dataset(data: Dataset, path, header: bool = False) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["label"] + [f"x{j}" for j in range(data.feature_count)])
        for y, row in zip(data.labels, data.features):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def write_indices(indices, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relevant_index"])
        for i in indices:
            w.writerow([int(i)])


def read_indices(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([int(r[0]) for r in rows if r], dtype=int)


def table_to_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_table(columns: list[str], rows: list[dict], path=None) -> str:
    """Write a table as CSV to ``path`` (or just return the text when path is None)."""
    text = table_to_csv(columns, rows)
    if path is not None:
        Path(path).write_text(text)
    return text
