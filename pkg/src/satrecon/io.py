"""Text and image serialization: problem containers, CSV tables, 16-bit graymaps."""
from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np

from .sensing import SaturatedObservations

__all__ = [
    "fmt",
    "write_problem",
    "read_problem",
    "emit_csv",
    "read_csv",
    "emit_matrix_csv",
    "read_matrix_csv",
    "emit_image",
    "read_image",
]


def fmt(v) -> str:
    """17 significant digits: exact round trip for 64-bit floats."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _open(path, mode):
    try:
        return open(path, mode, newline="" if "b" not in mode else None)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def write_problem(path, U, obs: SaturatedObservations, n: int | None = None, seed: int = 0):
    """Header ``d m n seed``, then the ``m`` sensing rows, then ``p psi y s`` per row."""
    U = np.asarray(getattr(U, "rows", U), dtype=float)
    m, d = U.shape
    if obs.m != m:
        raise ValueError("observation count does not match the sensing matrix")
    n = int(obs.psi.sum()) if n is None else n
    with _open(path, "w") as fh:
        fh.write(f"{d} {m} {n} {seed}\n")
        for row in U:
            fh.write(" ".join(fmt(v) for v in row) + "\n")
        for p, psi, y, s in zip(obs.p, obs.psi, obs.y, obs.s):
            fh.write(f"{fmt(p)} {int(psi)} {int(y)} {fmt(s)}\n")


def read_problem(path):
    """Returns ``(U, obs, header)`` with ``header = (d, m, n, seed)``."""
    with _open(path, "r") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    try:
        d, m, n, seed = (int(t) for t in lines[0].split())
        U = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + m]]).reshape(m, d)
        cols = [ln.split() for ln in lines[1 + m:1 + 2 * m]]
        if len(cols) != m:
            raise ValueError("truncated observation block")
        p = np.array([float(c[0]) for c in cols])
        psi = np.array([int(c[1]) for c in cols], dtype=bool)
        y = np.array([int(c[2]) for c in cols], dtype=np.int8)
        s = np.array([float(c[3]) for c in cols])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed problem file ({exc})") from exc
    lo = s[y < 0]
    hi = s[y > 0]
    s_minus = float(lo[0]) if lo.size else -np.inf
    s_plus = float(hi[0]) if hi.size else np.inf
    return U, SaturatedObservations(p, psi, y, s, s_minus, s_plus), (d, m, n, seed)


def _meta_lines(meta):
    return [f"# {k}={fmt(v)}" for k, v in (meta or {}).items()]


def emit_csv(path, columns, rows, meta: dict | None = None):
    """Table with ``# key=value`` comment lines carrying ``meta`` ahead of the header row."""
    buf = _io.StringIO()
    for ln in _meta_lines(meta):
        buf.write(ln + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    with _open(path, "w") as fh:
        fh.write(buf.getvalue())


def _coerce(tok: str):
    for cast in (int, float):
        try:
            return cast(tok)
        except ValueError:
            pass
    return tok


def read_csv(path):
    """Returns ``(meta, columns, rows)``; numeric cells come back as int/float."""
    meta = {}
    with _open(path, "r") as fh:
        text = fh.read().splitlines()
    body = []
    for ln in text:
        if ln.startswith("#"):
            k, _, v = ln[1:].strip().partition("=")
            meta[k] = _coerce(v)
        else:
            body.append(ln)
    if not body:
        return meta, [], []
    rd = list(csv.reader(body))
    return meta, rd[0], [[_coerce(t) for t in r] for r in rd[1:]]


def emit_matrix_csv(path, mat, meta: dict | None = None):
    """One row per matrix row (e.g. per view of a sinogram), no header row."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with _open(path, "w") as fh:
        for ln in _meta_lines(meta):
            fh.write(ln + "\n")
        for r in mat:
            fh.write(",".join(fmt(v) for v in r) + "\n")


def read_matrix_csv(path):
    meta = {}
    rows = []
    with _open(path, "r") as fh:
        for ln in fh.read().splitlines():
            if ln.startswith("#"):
                k, _, v = ln[1:].strip().partition("=")
                meta[k] = _coerce(v)
            elif ln.strip():
                rows.append([float(t) for t in ln.split(",")])
    return np.array(rows), meta


def _sidecar(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".txt")


def emit_image(path, img, pixel_size: float = 1.0, window=None):
    """16-bit binary graymap (big-endian) plus a ``<path>.txt`` sidecar.

    Values are mapped linearly from ``window = (lo, hi)`` (default: image
    range) onto 0..65535, rounding half to even.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    lo, hi = (float(img.min()), float(img.max())) if window is None else map(float, window)
    span = hi - lo
    if span > 0:
        u = np.rint(np.clip((img - lo) / span, 0.0, 1.0) * 65535.0)
    else:
        u = np.zeros(img.shape)
    ny, nx = img.shape
    with _open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        fh.write(u.astype(">u2").tobytes())
    with _open(_sidecar(path), "w") as fh:
        fh.write(f"nx {nx}\nny {ny}\npixel_size {fmt(float(pixel_size))}\n")
        fh.write(f"window_min {fmt(lo)}\nwindow_max {fmt(hi)}\n")


def read_image(path):
    """Returns ``(img, meta)`` with the values mapped back through the sidecar window."""
    with _open(path, "rb") as fh:
        data = fh.read()
    toks = []
    pos = 0
    while len(toks) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        toks.append(data[start:pos].decode("ascii"))
    pos += 1
    if toks[0] != "P5" or int(toks[3]) != 65535:
        raise ValueError(f"{path}: not a 16-bit binary graymap")
    nx, ny = int(toks[1]), int(toks[2])
    u = np.frombuffer(data[pos:pos + 2 * nx * ny], dtype=">u2").reshape(ny, nx).astype(float)
    meta = {}
    side = _sidecar(path)
    if side.exists():
        with _open(side, "r") as fh:
            for ln in fh.read().splitlines():
                k, _, v = ln.partition(" ")
                meta[k] = _coerce(v)
    lo = float(meta.get("window_min", 0.0))
    hi = float(meta.get("window_max", 65535.0))
    return lo + u / 65535.0 * (hi - lo), meta
