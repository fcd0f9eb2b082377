"""File writers: full-precision CSV, log-scaled graymap heatmaps, run manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

HEATMAP_DECADES = 8.0


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M, row_labels=None, col_labels=None) -> Path:
    """Comma-separated, 17 significant digits; labels add a header row and column."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lines = []
    if col_labels is not None:
        lines.append(",".join([""] + list(col_labels)))
    for i, row in enumerate(M):
        cells = [_fmt(x) for x in row]
        if row_labels is not None:
            cells.insert(0, row_labels[i])
        lines.append(",".join(cells))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_matrix_csv(path, labeled: bool = False) -> np.ndarray:
    rows = Path(path).read_text().splitlines()
    if labeled:
        rows = [r.split(",", 1)[1] for r in rows[1:]]
    return np.array([[float(c) for c in r.split(",")] for r in rows if r], dtype=np.float64)


def write_table_csv(path, rows, header=None) -> Path:
    """Rows of numbers (None becomes an empty cell)."""
    lines = [",".join(header)] if header else []
    for row in rows:
        lines.append(",".join("" if x is None else
                              (str(x) if isinstance(x, (int, np.integer)) else _fmt(x))
                              for x in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table_csv(path, header: bool = False) -> list[list]:
    rows = Path(path).read_text().splitlines()
    if header:
        rows = rows[1:]
    return [[float(c) if c else None for c in r.split(",")] for r in rows if r]


def heatmap_scale(M, decades: float = HEATMAP_DECADES) -> dict:
    a = np.abs(np.asarray(M, dtype=np.float64))
    positive = a[a > 0]
    if positive.size == 0:
        return {"log10_max": None, "log10_min": None, "decades": decades}
    hi = float(np.log10(positive.max()))
    lo = max(float(np.log10(positive.min())), hi - decades)
    return {"log10_max": hi, "log10_min": lo, "decades": decades}


def write_pgm(path, M, decades: float = HEATMAP_DECADES) -> dict:
    """Plain (P2) 8-bit graymap of ``log10 |M|``; returns the scale used.

    Brightness 255 is the largest magnitude, 0 is zero or anything at least
    ``decades`` orders of magnitude below it.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    scale = heatmap_scale(M, decades)
    a = np.abs(M)
    pix = np.zeros(M.shape, dtype=np.int64)
    if scale["log10_max"] is not None:
        hi, lo = scale["log10_max"], scale["log10_min"]
        span = hi - lo if hi > lo else 1.0
        with np.errstate(divide="ignore"):
            level = (np.log10(a) - lo) / span
        pix = np.where(a > 0, np.clip(np.rint(level * 255.0), 0, 255), 0).astype(np.int64)
        if hi == lo:
            pix[a > 0] = 255
    h, w = M.shape
    body = "\n".join(" ".join(map(str, row)) for row in pix.tolist())
    Path(path).write_text(f"P2\n{w} {h}\n255\n{body}\n")
    return scale


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain graymap")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + w * h], dtype=np.int64).reshape(h, w)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
