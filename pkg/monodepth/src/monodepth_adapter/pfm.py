"""Minimal PFM depth-map IO.

Exchange convention shared with the reconstruction pipeline: single
channel ``Pf``, little-endian (scale header -1.0), bottom-up scanlines,
invalid pixels encoded as -1.0.  This module is deliberately
self-contained so the adapter and the reconstruction package stay
decoupled: the only interface between them is the files themselves.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

INVALID = np.float32(-1.0)


class PfmError(ValueError):
    pass


def read_pfm(path: Path | str) -> np.ndarray:
    """Single-channel float32 array, top-down row order."""
    path = Path(path)
    if not path.is_file():
        raise PfmError(f"PFM file not found: {path}")
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise PfmError(f"{path}: expected single-channel PFM, got {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise PfmError(f"{path}: malformed dimension line")
        try:
            w, h = int(dims[0]), int(dims[1])
        except ValueError as exc:
            raise PfmError(f"{path}: malformed dimensions") from exc
        if w <= 0 or h <= 0 or w * h > 10**8:
            raise PfmError(f"{path}: dimensions out of range ({w}x{h})")
        try:
            scale = float(f.readline())
        except ValueError as exc:
            raise PfmError(f"{path}: malformed scale line") from exc
        raw = f.read(w * h * 4)
        if len(raw) != w * h * 4:
            raise PfmError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype="<f4" if scale < 0 else ">f4")
    return data.astype(np.float32).reshape(h, w)[::-1].copy()


def write_pfm(data: np.ndarray, path: Path | str) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise PfmError("expected a 2-D depth map")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1]).tobytes())
