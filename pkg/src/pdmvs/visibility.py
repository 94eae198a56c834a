"""Cross-view visibility: per-(pixel, source-view) weights, restoration
of originally-visible areas via reprojection post-verification, and
per-view anchor filtering.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .geometry import relative_pose
from .scene_io import CameraModel, DepthMapBuffer


def init_view_weights(
    per_view_costs, tau_good: float = 0.8, bandwidth: float = 0.3
) -> np.ndarray:
    """Gaussian-of-cost weights with a hard cutoff above tau_good.

    Works elementwise on arrays of any shape (typically (H, W, nsrc)).
    """
    costs = np.asarray(per_view_costs, dtype=np.float64)
    w = np.exp(-(costs**2) / (2.0 * bandwidth**2))
    return np.where(costs < tau_good, w, 0.0)


def pair_geometry(cam_i: CameraModel, cams_src: list[CameraModel]):
    """Stacked per-source-pair arrays consumed by the kernels."""
    nsrc = len(cams_src)
    Kinv = np.linalg.inv(cam_i.K)
    P1 = np.empty((nsrc, 3, 3))
    P2 = np.empty((nsrc, 3))
    G1 = np.empty((nsrc, 3, 3))
    Rrel = np.empty((nsrc, 3, 3))
    trel = np.empty((nsrc, 3))
    Kjinv = np.empty((nsrc, 3, 3))
    c_rel = np.empty((nsrc, 3))
    Ci = cam_i.center
    for j, cam_j in enumerate(cams_src):
        R_rel, t_rel = relative_pose(cam_i, cam_j)
        Rrel[j] = R_rel
        trel[j] = t_rel
        G1[j] = cam_j.K @ R_rel
        P1[j] = G1[j] @ Kinv
        P2[j] = cam_j.K @ t_rel
        Kjinv[j] = np.linalg.inv(cam_j.K)
        c_rel[j] = cam_i.R @ (cam_j.center - Ci)
    return {
        "Kinv": Kinv, "P1": P1, "P2": P2, "G1": G1,
        "Rrel": Rrel, "trel": trel, "Kjinv": Kjinv, "c_rel": c_rel,
    }


def restore_visibility(
    weights: np.ndarray,
    cam_i: CameraModel,
    cams_src: list[CameraModel],
    depth_map_i: DepthMapBuffer,
    depth_maps_src: list[DepthMapBuffer],
    eps_reproj: float = 2.0,
    w_min_restored: float = 0.1,
) -> np.ndarray:
    """Return a copy of ``weights`` where zero entries whose cross-view
    reprojection error is within eps_reproj become w_min_restored.
    Positive entries are never touched."""
    geom = pair_geometry(cam_i, cams_src)
    out = np.array(weights, dtype=np.float64, copy=True)
    depths = np.where(
        depth_map_i.valid, depth_map_i.values, np.float32(-1.0)
    ).astype(np.float64)
    src_depths = np.stack(
        [
            np.where(dm.valid, dm.values, np.float32(-1.0))
            for dm in depth_maps_src
        ]
    ).astype(np.float64)
    kernels.restore_visibility_weights(
        depths, src_depths, geom["P1"], geom["P2"], geom["Rrel"],
        geom["trel"], geom["Kjinv"], cam_i.K,
        eps_reproj, w_min_restored, out,
    )
    return out


def filter_anchors_by_visibility(p, s_prime, weights: np.ndarray, j: int):
    """Retain anchors with positive weight for source view j.

    Visibility is evaluated at the anchor pixel (config default); the
    anchors are assumed to be region-filtered already.
    """
    return [s for s in s_prime if weights[int(s[1]), int(s[0]), j] > 0.0]
