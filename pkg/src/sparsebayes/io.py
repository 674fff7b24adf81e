"""Text file formats used by the command-line front end.

* Tensors: line 1 ``dims J1 ... JP``, then one ``i1 ... iP value`` line per
  observed entry with 0-based indices. Blank lines and ``#`` comments are
  skipped. Dense output lists every entry in C order.
* Tables (regression and classification data): comma-separated numbers with
  an optional header row; the last column is the target or integer label.
* Time series: CSV with the header ``t,value``.
* Result documents: JSON, keys sorted, floats written losslessly; non-finite
  floats become ``null``.

Examples
--------
>>> import tempfile, os
>>> path = os.path.join(tempfile.mkdtemp(), "t.txt")
>>> write_dense_tensor(path, np.arange(4.0).reshape(2, 2))
>>> read_tensor(path).n_obs
4
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ._errors import ParseError
from .cpd import PartialTensor

__all__ = [
    "read_dataset",
    "read_series",
    "read_table",
    "read_tensor",
    "read_times",
    "to_plain",
    "write_dense_tensor",
    "write_json",
    "write_series",
    "write_table",
    "write_tensor",
    "write_trace",
]


def _float(token, path, line, column):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"expected a number, got {token!r}", path, line, column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r}", path, line, column)
    return value


def _int(token, path, line, column, what="integer"):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"expected an {what}, got {token!r}", path, line, column) from None


def _fmt(value) -> str:
    return repr(float(value))


# -- tensors --------------------------------------------------------------------------


def read_tensor(path) -> PartialTensor:
    """Read the sparse tensor text format."""
    path = str(path)
    dims, indices, values, seen = None, [], [], {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0]
            tokens = text.split()
            if not tokens:
                continue
            cols = _columns(text)
            if dims is None:
                if tokens[0] != "dims":
                    raise ParseError("first line must start with 'dims'", path, lineno, cols[0])
                if len(tokens) < 3:
                    raise ParseError("need at least two mode sizes", path, lineno, cols[0])
                dims = [_int(t, path, lineno, c, "integer mode size") for t, c in zip(tokens[1:], cols[1:])]
                for d, c in zip(dims, cols[1:]):
                    if d < 1:
                        raise ParseError("mode sizes must be positive", path, lineno, c)
                continue
            P = len(dims)
            if len(tokens) != P + 1:
                raise ParseError(f"expected {P} indices and a value, got {len(tokens)} fields",
                                 path, lineno, cols[min(len(cols) - 1, P)])
            idx = []
            for p, (t, c) in enumerate(zip(tokens[:P], cols[:P])):
                i = _int(t, path, lineno, c, "integer index")
                if not 0 <= i < dims[p]:
                    raise ParseError(f"index {i} out of range for mode of size {dims[p]}", path, lineno, c)
                idx.append(i)
            key = tuple(idx)
            if key in seen:
                raise ParseError(f"duplicate entry (first on line {seen[key]})", path, lineno, cols[0])
            seen[key] = lineno
            indices.append(idx)
            values.append(_float(tokens[P], path, lineno, cols[P]))
    if dims is None:
        raise ParseError("empty tensor file", path, 1, 1)
    if not values:
        raise ParseError("no observed entries", path)
    return PartialTensor(dims, np.array(indices, dtype=int), np.array(values))


def _columns(text):
    """1-based start column of every whitespace-separated token."""
    cols, prev_space = [], True
    for i, ch in enumerate(text):
        space = ch.isspace()
        if prev_space and not space:
            cols.append(i + 1)
        prev_space = space
    return cols


def write_tensor(path, tensor: PartialTensor) -> None:
    """Write the observed entries of ``tensor``."""
    with open(path, "w") as fh:
        fh.write("dims " + " ".join(str(d) for d in tensor.dims) + "\n")
        for idx, v in zip(tensor.indices, tensor.values):
            fh.write(" ".join(str(int(i)) for i in idx) + " " + _fmt(v) + "\n")


def write_dense_tensor(path, array) -> None:
    """Write every entry of a dense array in C order."""
    array = np.asarray(array, dtype=float)
    with open(path, "w") as fh:
        fh.write("dims " + " ".join(str(d) for d in array.shape) + "\n")
        for idx in np.ndindex(array.shape):
            fh.write(" ".join(str(i) for i in idx) + " " + _fmt(array[idx]) + "\n")


# -- CSV tables -----------------------------------------------------------------------


def _rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if row and any(cell.strip() for cell in row):
                yield lineno, [cell.strip() for cell in row]


def _is_header(row):
    try:
        [float(c) for c in row]
    except ValueError:
        return True
    return False


def read_table(path, integer_last=False):
    """Numeric CSV with an optional header; returns ``(features, last_column, header)``."""
    path = str(path)
    header, data, width = None, [], None
    for k, (lineno, row) in enumerate(_rows(path)):
        if k == 0 and _is_header(row):
            header = row
            width = len(row)
            continue
        if width is None:
            width = len(row)
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", path, lineno, 1)
        if width < 2:
            raise ParseError("need at least one feature column and a target column", path, lineno, 1)
        vals = [_float(c, path, lineno, j + 1) for j, c in enumerate(row[:-1])]
        if integer_last:
            vals.append(_int(row[-1], path, lineno, width, "integer label"))
        else:
            vals.append(_float(row[-1], path, lineno, width))
        data.append(vals)
    if not data:
        raise ParseError("no data rows", path)
    X = np.array([r[:-1] for r in data], dtype=float)
    last = np.array([r[-1] for r in data], dtype=int if integer_last else float)
    return X, last, header


def read_dataset(path):
    """Classification CSV: feature columns then an integer label column."""
    X, labels, _ = read_table(path, integer_last=True)
    return X, labels


def write_table(path, X, last, header=None) -> None:
    X = np.atleast_2d(np.asarray(X))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row, v in zip(X, last):
            w.writerow([_fmt(c) for c in row] + [str(v) if isinstance(v, (int, np.integer)) else _fmt(v)])


def read_series(path):
    """Time-series CSV with header ``t,value``; returns ``(t, y)``."""
    path = str(path)
    rows = list(_rows(path))
    if not rows:
        raise ParseError("empty file", path, 1, 1)
    lineno, head = rows[0]
    if [h.lower() for h in head] != ["t", "value"]:
        raise ParseError("header must be 't,value'", path, lineno, 1)
    t, y = [], []
    for lineno, row in rows[1:]:
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", path, lineno, 1)
        t.append(_float(row[0], path, lineno, 1))
        y.append(_float(row[1], path, lineno, 2))
    if not t:
        raise ParseError("no data rows", path)
    return np.array(t), np.array(y)


def write_series(path, t, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"])
        for a, b in zip(t, y):
            w.writerow([_fmt(a), _fmt(b)])


def read_times(path):
    """Query times: a CSV whose first column is ``t`` (header required); a
    ``value`` column, if present, is returned as ground truth."""
    path = str(path)
    rows = list(_rows(path))
    if not rows:
        raise ParseError("empty file", path, 1, 1)
    lineno, head = rows[0]
    head = [h.lower() for h in head]
    if head not in (["t"], ["t", "value"]):
        raise ParseError("header must be 't' or 't,value'", path, lineno, 1)
    t, y = [], []
    for lineno, row in rows[1:]:
        if len(row) != len(head):
            raise ParseError(f"expected {len(head)} fields, got {len(row)}", path, lineno, 1)
        t.append(_float(row[0], path, lineno, 1))
        if len(head) == 2:
            y.append(_float(row[1], path, lineno, 2))
    return np.array(t), (np.array(y) if len(head) == 2 else None)


def write_trace(path, columns: dict) -> None:
    """Plot-ready CSV: one column per key, rows aligned by position."""
    names = list(columns)
    n = max((len(v) for v in columns.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            row = []
            for k in names:
                col = columns[k]
                if i >= len(col):
                    row.append("")
                elif isinstance(col[i], (bool, np.bool_)):
                    row.append(str(int(col[i])))
                elif isinstance(col[i], (int, np.integer)):
                    row.append(str(int(col[i])))
                else:
                    row.append(_fmt(col[i]))
            w.writerow(row)


# -- JSON -----------------------------------------------------------------------------


def to_plain(obj):
    """Recursively convert numpy values to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, doc) -> None:
    text = json.dumps(to_plain(doc), sort_keys=True, indent=2, allow_nan=False)
    with open(path, "w") as fh:
        fh.write(text + "\n")
