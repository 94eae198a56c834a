"""Patch matching costs: bilateral-weighted NCC, the deformable blend,
and visibility-weighted multi-view aggregation.

Costs live in [0, 2]; 0 is a perfect match and degenerate patches
(constant intensity, or mostly out of view) are pinned to 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import PlaneHypothesis, relative_pose
from .scene_io import CameraModel

COST_MAX = kernels.COST_MAX


@dataclass(frozen=True)
class PatchSpec:
    size: int = 11
    stride: int = 5


CENTRAL_PATCH = PatchSpec(size=11, stride=5)
ANCHOR_PATCH = PatchSpec(size=11, stride=2)

_NO_ANCHORS = np.full((1, 2), -1, dtype=np.int32)
_NO_WEIGHTS = np.zeros(1)


def _pair_arrays(cam_i: CameraModel, cam_j: CameraModel):
    Kinv = np.linalg.inv(cam_i.K)
    R_rel, t_rel = relative_pose(cam_i, cam_j)
    P1 = cam_j.K @ R_rel @ Kinv
    P2 = cam_j.K @ t_rel
    return P1, P2, Kinv


def ncc_cost(
    img_i: np.ndarray,
    img_j: np.ndarray,
    p,
    hyp: PlaneHypothesis,
    spec: PatchSpec,
    cam_i: CameraModel,
    cam_j: CameraModel,
    sigma_c: float = 0.2,
) -> float:
    """Bilateral-weighted NCC cost of one patch under the hypothesis."""
    P1, P2, Kinv = _pair_arrays(cam_i, cam_j)
    H = np.empty((3, 3))
    return float(
        kernels.view_cost(
            np.asarray(img_i, dtype=np.float32),
            np.asarray(img_j, dtype=np.float32),
            P1, P2, Kinv, int(p[0]), int(p[1]),
            hyp.n[0], hyp.n[1], hyp.n[2], hyp.d,
            _NO_ANCHORS, 0, _NO_WEIGHTS,
            spec.size, spec.stride, spec.stride, sigma_c, 1.0, H,
        )
    )


def deformable_cost(
    p,
    hyp: PlaneHypothesis,
    anchors,
    img_i: np.ndarray,
    img_j: np.ndarray,
    cam_i: CameraModel,
    cam_j: CameraModel,
    lam: float = 0.25,
    sigma_c: float = 0.2,
    central: PatchSpec = CENTRAL_PATCH,
    sub: PatchSpec = ANCHOR_PATCH,
) -> float:
    """lam * central cost + (1 - lam) * mean anchor sub-patch cost.

    Every anchor sub-patch is evaluated with p's candidate hypothesis;
    an empty anchor set falls back to the central patch alone.
    """
    anchors = list(anchors)
    if not anchors:
        return ncc_cost(img_i, img_j, p, hyp, central, cam_i, cam_j, sigma_c)
    P1, P2, Kinv = _pair_arrays(cam_i, cam_j)
    H = np.empty((3, 3))
    anchor_arr = np.array([[int(a[0]), int(a[1])] for a in anchors], dtype=np.int32)
    weights = np.ones(len(anchors))
    return float(
        kernels.view_cost(
            np.asarray(img_i, dtype=np.float32),
            np.asarray(img_j, dtype=np.float32),
            P1, P2, Kinv, int(p[0]), int(p[1]),
            hyp.n[0], hyp.n[1], hyp.n[2], hyp.d,
            anchor_arr, len(anchors), weights,
            central.size, central.stride, sub.stride, sigma_c, lam, H,
        )
    )


def aggregate_cost(per_view_costs, weights) -> float:
    """Weighted mean of per-view costs; COST_MAX with no visible view."""
    costs = np.asarray(per_view_costs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if costs.shape != w.shape:
        raise ValueError("costs and weights must have equal length")
    sw = w.sum()
    if sw <= 0:
        return COST_MAX
    return float((w * costs).sum() / sw)
