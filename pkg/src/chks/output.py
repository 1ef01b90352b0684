"""CSV tables and field snapshots (16-bit PGM and raw little-endian doubles)."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

PGM_MAX = 65535
_AFFINE = re.compile(r"#\s*affine value = ([-+0-9.eEinfa]+) \+ ([-+0-9.eEinfa]+) \* level")


def fmt(value) -> str:
    """Round-trippable text for a table cell."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvWriter:
    """Line-buffered CSV writer; each row is flushed so partial runs stay readable."""

    def __init__(self, path, header):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(header)
        self.ncols = len(header)

    def write(self, row):
        if len(row) != self.ncols:
            raise ValueError(f"row has {len(row)} cells, header has {self.ncols}")
        self._w.writerow([fmt(v) for v in row])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path, header, rows):
    with CsvWriter(path, header) as w:
        for r in rows:
            w.write(r)


def read_csv(path):
    """Header and float rows of a table written by ``write_csv``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


# ----------------------------------------------------------------------


def _as_image(field):
    a = np.asarray(field, dtype=float)
    if a.ndim == 1:
        return a[None, :]
    # rows are y (top = largest y), columns are x
    return a.T[::-1]


def write_pgm(path, field, lo=None, hi=None):
    """16-bit binary PGM; level k stands for value lo + k * (hi - lo) / 65535."""
    img = _as_image(field)
    lo = float(np.min(img)) if lo is None else float(lo)
    hi = float(np.max(img)) if hi is None else float(hi)
    scale = (hi - lo) / PGM_MAX if hi > lo else 0.0
    if scale > 0:
        levels = np.rint((np.clip(img, lo, hi) - lo) / scale)
    else:
        levels = np.zeros_like(img)
    h, w = img.shape
    header = f"P5\n# affine value = {lo!r} + {scale!r} * level\n{w} {h}\n{PGM_MAX}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(levels.astype(">u2").tobytes())


def read_pgm(path):
    """Return (levels, offset, scale) from a file written by ``write_pgm``."""
    data = Path(path).read_bytes()
    lines, pos = [], 0
    while len([ln for ln in lines if not ln.startswith("#")]) < 3:
        end = data.index(b"\n", pos)
        lines.append(data[pos:end].decode("ascii"))
        pos = end + 1
    if lines[0] != "P5":
        raise ValueError("not a binary PGM file")
    m = next((_AFFINE.match(ln) for ln in lines if _AFFINE.match(ln)), None)
    offset, scale = (float(m.group(1)), float(m.group(2))) if m else (0.0, 1.0)
    w, h = (int(v) for v in [ln for ln in lines if not ln.startswith("#")][1].split())
    levels = np.frombuffer(data[pos:pos + 2 * w * h], dtype=">u2").reshape(h, w)
    return levels, offset, scale


def write_raw(path, field):
    np.ascontiguousarray(field, dtype="<f8").tofile(path)


def read_raw(path, shape):
    return np.fromfile(path, dtype="<f8").reshape(shape)


def write_snapshot(out_dir, step, state, formats):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("phi", "mu", "sigma"):
        field = getattr(state, name)
        stem = out / f"{name}_{step:06d}"
        if "pgm" in formats:
            write_pgm(stem.with_suffix(".pgm"), field)
            written.append(stem.with_suffix(".pgm"))
        if "raw" in formats:
            write_raw(stem.with_suffix(".raw"), field)
            written.append(stem.with_suffix(".raw"))
    return written

