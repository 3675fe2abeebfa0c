"""CSV/JSON readers and writers used by the command-line front end.

Floats are written with ``%.16e`` (17 significant digits), which round-trips
IEEE doubles exactly. Complex matrices are stored as ``<name>_re,<name>_im``
column pairs in CSV and as ``{"re": .., "im": ..}`` objects in JSON. Every
file is written to a temporary sibling first and renamed into place.
"""
import csv
import io
import json
import os
from pathlib import Path
import tempfile

import numpy as np

FLOAT_FMT = "%.16e"


def fmt(x):
    return FLOAT_FMT % x


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write_text(path, _csv_text(header, rows))


def write_trajectory_csv(path, t, X, names):
    """One row per sample: ``t,x1,...,xn``."""
    X = np.asarray(X)
    rows = ([fmt(tk)] + [fmt(v) for v in X[:, k]] for k, tk in enumerate(t))
    write_csv(path, ["t", *names], rows)


def read_trajectory_csv(path):
    """Return ``(t, X, names)`` with X shaped ``n x samples``.

    A leading ``t`` (or ``time``) column is optional; without it ``t`` is None.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: header has {len(header)} columns, data {data.shape[1]}")
    if header[0].lower() in ("t", "time"):
        return data[:, 0], data[:, 1:].T.copy(), header[1:]
    return None, data.T.copy(), header


def write_real_matrix_csv(path, M, row_label, row_names, col_names):
    M = np.asarray(M, dtype=float)
    rows = ([rn] + [fmt(v) for v in M[i]] for i, rn in enumerate(row_names))
    write_csv(path, [row_label, *col_names], rows)


def write_complex_matrix_csv(path, M, row_label, row_names, col_names):
    M = np.asarray(M, dtype=complex)
    header = [row_label]
    for c in col_names:
        header += [f"{c}_re", f"{c}_im"]
    rows = []
    for i, rn in enumerate(row_names):
        row = [rn]
        for v in M[i]:
            row += [fmt(v.real), fmt(v.imag)]
        rows.append(row)
    write_csv(path, header, rows)


def read_matrix_csv(path):
    """Read a labelled matrix written by the writers above.

    Returns ``(row_names, col_names, M)``; ``_re``/``_im`` column pairs are
    merged into a complex matrix.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0][1:]
    names = [r[0] for r in rows[1:]]
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if header and all(h.endswith("_re") for h in header[0::2]) and all(
        h.endswith("_im") for h in header[1::2]
    ):
        return names, [h[:-3] for h in header[0::2]], vals[:, 0::2] + 1j * vals[:, 1::2]
    return names, header, vals


def complex_to_json(a):
    a = np.asarray(a)
    if a.ndim == 0:
        z = complex(a)
        return {"re": z.real, "im": z.imag}
    return [complex_to_json(x) for x in a]


def complex_from_json(obj):
    def conv(o):
        if isinstance(o, dict):
            return complex(o["re"], o["im"])
        return [conv(x) for x in o]

    return np.array(conv(obj), dtype=complex)


def _finite_or_str(x):
    x = float(x)
    return x if np.isfinite(x) else repr(x)


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return _finite_or_str(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
