"""CSV and JSON file formats used by the command line.

Series CSV::

    series_id,t,x1,...,xd

rows grouped by ``series_id`` with ``t`` strictly increasing inside a
group. Labels CSV is ``series_id,label`` (classification) or
``series_id,y1,...,yk`` (regression). Floats are written with ``repr``,
the shortest decimal that round-trips, and lines end with LF.
"""

import csv
import io

import numpy as np

from .errors import InvalidArgument
from .sigpath import TimeSeries


def fmt(v):
    return repr(float(v))


def _rows(text):
    return csv.reader(io.StringIO(text))


def read_series_csv(text):
    """Parse a series CSV; returns ``[(series_id, TimeSeries), ...]`` in file order."""
    reader = _rows(text)
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidArgument("line 1: empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "series_id" or header[1] != "t":
        raise InvalidArgument("line 1: header must be series_id,t,x1,...,xd")
    d = len(header) - 2
    groups = {}
    order = []
    last_id = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 2:
            raise InvalidArgument(f"line {lineno}: expected {d + 2} fields, got {len(row)}")
        sid = row[0].strip()
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise InvalidArgument(f"line {lineno}: non-numeric field") from None
        if not np.all(np.isfinite(vals)):
            raise InvalidArgument(f"line {lineno}: non-finite value")
        if sid != last_id:
            if sid in groups:
                raise InvalidArgument(f"line {lineno}: rows of series {sid!r} are not contiguous")
            groups[sid] = []
            order.append(sid)
            last_id = sid
        rows = groups[sid]
        if rows and vals[0] <= rows[-1][0]:
            raise InvalidArgument(f"line {lineno}: t must increase within series {sid!r}")
        rows.append(vals)
    if not order:
        raise InvalidArgument("line 2: no data rows")
    out = []
    for sid in order:
        arr = np.asarray(groups[sid])
        out.append((sid, TimeSeries(arr[:, 1:], arr[:, 0])))
    return out


def write_series_csv(items):
    """Inverse of :func:`read_series_csv`; ``items`` is ``[(series_id, TimeSeries)]``."""
    if not items:
        raise InvalidArgument("nothing to write")
    d = items[0][1].dim
    lines = ["series_id,t," + ",".join(f"x{j + 1}" for j in range(d))]
    for sid, ts in items:
        for t, row in zip(ts.times, ts.values):
            lines.append(",".join([str(sid), fmt(t)] + [fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def read_labels_csv(text, ids=None):
    """Returns ``(targets, task)``; rows are reordered to match ``ids`` if given."""
    reader = _rows(text)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InvalidArgument("line 1: empty labels file") from None
    if len(header) < 2 or header[0] != "series_id":
        raise InvalidArgument("line 1: header must be series_id,label or series_id,y1,...")
    task = "classification" if header[1:] == ["label"] else "regression"
    table = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InvalidArgument(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            if task == "classification":
                val = int(row[1])
                if val < 0:
                    raise ValueError
            else:
                val = [float(c) for c in row[1:]]
        except ValueError:
            raise InvalidArgument(f"line {lineno}: bad label value") from None
        table[row[0].strip()] = val
    keys = list(table) if ids is None else list(ids)
    missing = [k for k in keys if k not in table]
    if missing:
        raise InvalidArgument(f"no label for series {missing[0]!r}")
    targets = np.asarray([table[k] for k in keys])
    return targets, task


def write_labels_csv(ids, targets, task):
    targets = np.asarray(targets)
    if task == "classification":
        lines = ["series_id,label"] + [f"{sid},{int(y)}" for sid, y in zip(ids, targets)]
    else:
        k = targets.shape[1]
        lines = ["series_id," + ",".join(f"y{j + 1}" for j in range(k))]
        lines += [",".join([str(sid)] + [fmt(v) for v in y]) for sid, y in zip(ids, targets)]
    return "\n".join(lines) + "\n"


def write_matrices_csv(records, m):
    """``records`` is ``[(series_id, step, matrix)]``; matrices are flattened row-major."""
    cols = [f"z{i + 1}_{j + 1}" for i in range(m) for j in range(m)]
    lines = ["series_id,step," + ",".join(cols)]
    for sid, step, Z in records:
        lines.append(",".join([str(sid), str(step)] + [fmt(v) for v in np.ravel(Z)]))
    return "\n".join(lines) + "\n"


def read_matrices_csv(text):
    reader = _rows(text)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InvalidArgument("line 1: empty file") from None
    if header[:2] != ["series_id", "step"]:
        raise InvalidArgument("line 1: header must start with series_id,step")
    n = len(header) - 2
    m = int(round(np.sqrt(n)))
    if m * m != n or m < 1:
        raise InvalidArgument(f"line 1: {n} matrix columns is not a square count")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != n + 2:
            raise InvalidArgument(f"line {lineno}: expected {n + 2} fields, got {len(row)}")
        try:
            Z = np.asarray([float(c) for c in row[2:]]).reshape(m, m)
            step = int(row[1])
        except ValueError:
            raise InvalidArgument(f"line {lineno}: non-numeric field") from None
        out.append((row[0].strip(), step, Z))
    return out, m
