"""Small-format image IO: ASCII PGM and CSV grids for inspection and ingestion."""

from __future__ import annotations

import numpy as np

__all__ = ["save_pgm", "load_pgm", "upscale_nearest"]


def save_pgm(path, a: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Write a 2-D array as ASCII PGM, mapping [lo, hi] to [0, 255].

    Defaults map the array's own min/max; a flat array becomes mid-gray.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM wants a 2-D array, got shape {a.shape}")
    lo = float(a.min()) if lo is None else float(lo)
    hi = float(a.max()) if hi is None else float(hi)
    if hi <= lo:
        pix = np.full(a.shape, 128, dtype=np.int64)
    else:
        pix = np.clip(np.rint((a - lo) / (hi - lo) * 255.0), 0, 255).astype(np.int64)
    lines = [f"P2\n{a.shape[1]} {a.shape[0]}\n255\n"]
    for row in pix:
        lines.append(" ".join(str(v) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


def load_pgm(path) -> np.ndarray:
    """Read P2 or P5 PGM; returns floats scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise ValueError(f"{path} is not a PGM file")
    binary = data[:2] == b"P5"

    # header tokens (magic, width, height, maxval), skipping '#' comments
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    w, h, maxval = tokens
    i += 1  # single whitespace after maxval
    if binary:
        pix = np.frombuffer(data[i:i + w * h], dtype=np.uint8).astype(np.float64)
    else:
        pix = np.array(data[i:].split(), dtype=np.float64)
    if pix.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {pix.size}")
    return pix.reshape(h, w) / float(maxval)


def upscale_nearest(a: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upscale of a 2-D grid, for viewable heatmaps."""
    if factor < 1:
        raise ValueError("upscale factor must be >= 1")
    return np.repeat(np.repeat(a, factor, axis=0), factor, axis=1)
