"""Produce per-view relative depth maps as normalized PFM files.

Two entry points, both returning a process-style exit status:

* :func:`infer_depth` runs a pretrained monocular depth model over a
  directory of images.
* :func:`normalize_external` re-normalizes existing depth PFMs of
  arbitrary units.

Both write one PFM per input, values min-max normalized to [0, 1]
(invalid pixels preserved as -1.0), plus a ``manifest.txt`` recording
the model id and the per-image normalization range.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import numpy as np

from .pfm import INVALID, PfmError, read_pfm, write_pfm

log = logging.getLogger("monodepth_adapter")

DEFAULT_MODEL = "depth-anything/Depth-Anything-V2-Small-hf"

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif",
                  ".tiff")


def _normalize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max map valid (finite, non-negative) entries to [0, 1].

    A constant map becomes all 0.5: its range carries no signal and the
    midpoint avoids manufacturing gradients.  Already-normalized maps
    pass through bit-identically (lo = 0, hi = 1 is the fixed point),
    which makes the operation idempotent.
    """
    values = np.asarray(values, dtype=np.float32)
    valid = np.isfinite(values) & (values >= 0.0)
    if not valid.any():
        raise PfmError("depth map has no valid pixels")
    lo = float(values[valid].min())
    hi = float(values[valid].max())
    if hi > lo:
        out = (values - np.float32(lo)) / np.float32(hi - lo)
    else:
        out = np.full_like(values, 0.5)
    out = np.where(valid, out.astype(np.float32), INVALID)
    return out, lo, hi


def _write_manifest(out_dir: Path, model_id: str,
                    entries: list[tuple[str, float, float]]) -> None:
    lines = [f"model = {model_id}", "name min max"]
    lines += [f"{name} {lo!r} {hi!r}" for name, lo, hi in entries]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def normalize_external(depth_dir: Path | str, out_dir: Path | str) -> int:
    """Normalize every ``*.pfm`` under ``depth_dir`` into ``out_dir``."""
    depth_dir = Path(depth_dir)
    out_dir = Path(out_dir)
    pfms = sorted(depth_dir.glob("*.pfm"))
    if not pfms:
        log.error("no PFM files in %s", depth_dir)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for path in pfms:
        try:
            norm, lo, hi = _normalize(read_pfm(path))
        except PfmError as exc:
            log.error("%s", exc)
            return 1
        write_pfm(norm, out_dir / path.name)
        entries.append((path.stem, lo, hi))
    _write_manifest(out_dir, "external", entries)
    return 0


def _load_model(model_id: str):
    from transformers import pipeline  # deferred: heavyweight import

    return pipeline("depth-estimation", model=model_id, device=-1)


def infer_depth(image_dir: Path | str, out_dir: Path | str,
                model_id: str = DEFAULT_MODEL) -> int:
    """Run a monocular depth model over every image in ``image_dir``."""
    from PIL import Image

    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    images = sorted(
        p for p in image_dir.iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        log.error("no images in %s", image_dir)
        return 1
    try:
        model = _load_model(model_id)
    except Exception as exc:  # noqa: BLE001 - any load failure is fatal
        log.error("could not load depth model %r: %s", model_id, exc)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for path in images:
        try:
            img = Image.open(path).convert("RGB")
        except OSError as exc:
            log.error("unreadable image %s: %s", path, exc)
            return 1
        pred = model(img)["predicted_depth"]
        depth = np.asarray(pred, dtype=np.float32).squeeze()
        if depth.shape != (img.height, img.width):
            from PIL import Image as _I

            depth = np.asarray(
                _I.fromarray(depth).resize((img.width, img.height),
                                           _I.BILINEAR),
                dtype=np.float32,
            )
        try:
            norm, lo, hi = _normalize(depth)
        except PfmError as exc:
            log.error("%s: %s", path, exc)
            return 1
        write_pfm(norm, out_dir / f"{path.stem}.pfm")
        entries.append((path.stem, lo, hi))
    _write_manifest(out_dir, model_id, entries)
    return 0


def _configure_logging() -> None:
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
