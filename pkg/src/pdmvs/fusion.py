"""Depth-map fusion: consistency-checked merging of per-view depth and
normal maps into a single oriented point cloud.

A pixel seeds a fused point when enough source views agree with it
(reprojection distance, relative depth difference and normal angle all
within bounds). Supporting pixels are consumed so each (view, pixel)
contributes to at most one fused point.
"""

from __future__ import annotations

import math

import numpy as np

from .accel import njit
from .config import RunConfig
from .scene_io import CameraModel, DepthMapBuffer, PointCloud


@njit(cache=True, fastmath=True)
def _fuse_kernel(
    depths, valid, normals_w, points_w, grays,
    K, R, T, heights, widths,
    min_views, max_reproj, max_rel_diff, cos_min,
    out_pos, out_nrm, out_gray,
):
    nviews = depths.shape[0]
    h = depths.shape[1]
    w = depths.shape[2]
    consumed = np.zeros((nviews, h, w), dtype=np.bool_)
    count = 0
    sup_v = np.empty(nviews, dtype=np.int64)
    sup_x = np.empty(nviews, dtype=np.int64)
    sup_y = np.empty(nviews, dtype=np.int64)
    for i in range(nviews):
        for y in range(h):
            for x in range(w):
                if consumed[i, y, x] or not valid[i, y, x]:
                    continue
                px_ = points_w[i, y, x, 0]
                py_ = points_w[i, y, x, 1]
                pz_ = points_w[i, y, x, 2]
                nx_ = normals_w[i, y, x, 0]
                ny_ = normals_w[i, y, x, 1]
                nz_ = normals_w[i, y, x, 2]
                nsup = 0
                accx = px_
                accy = py_
                accz = pz_
                anx = nx_
                any_ = ny_
                anz = nz_
                ag = grays[i, y, x]
                for j in range(nviews):
                    if j == i:
                        continue
                    # project the seed point into view j
                    cx = R[j, 0, 0] * px_ + R[j, 0, 1] * py_ + R[j, 0, 2] * pz_ + T[j, 0]
                    cy = R[j, 1, 0] * px_ + R[j, 1, 1] * py_ + R[j, 1, 2] * pz_ + T[j, 1]
                    cz = R[j, 2, 0] * px_ + R[j, 2, 1] * py_ + R[j, 2, 2] * pz_ + T[j, 2]
                    if cz <= 1e-12:
                        continue
                    ux = (K[j, 0, 0] * cx + K[j, 0, 1] * cy + K[j, 0, 2] * cz) / cz
                    uy = (K[j, 1, 1] * cy + K[j, 1, 2] * cz) / cz
                    xj = int(round(ux))
                    yj = int(round(uy))
                    if xj < 0 or xj >= widths[j] or yj < 0 or yj >= heights[j]:
                        continue
                    if consumed[j, yj, xj] or not valid[j, yj, xj]:
                        continue
                    # relative depth agreement in view j
                    dj = depths[j, yj, xj]
                    if abs(cz - dj) > max_rel_diff * dj:
                        continue
                    # reprojection of view j's own point back into view i
                    qx = points_w[j, yj, xj, 0]
                    qy = points_w[j, yj, xj, 1]
                    qz = points_w[j, yj, xj, 2]
                    bx = R[i, 0, 0] * qx + R[i, 0, 1] * qy + R[i, 0, 2] * qz + T[i, 0]
                    by = R[i, 1, 0] * qx + R[i, 1, 1] * qy + R[i, 1, 2] * qz + T[i, 1]
                    bz = R[i, 2, 0] * qx + R[i, 2, 1] * qy + R[i, 2, 2] * qz + T[i, 2]
                    if bz <= 1e-12:
                        continue
                    rx = (K[i, 0, 0] * bx + K[i, 0, 1] * by + K[i, 0, 2] * bz) / bz
                    ry = (K[i, 1, 1] * by + K[i, 1, 2] * bz) / bz
                    err = math.sqrt((rx - x) * (rx - x) + (ry - y) * (ry - y))
                    if err > max_reproj:
                        continue
                    # normal agreement
                    dot = (
                        nx_ * normals_w[j, yj, xj, 0]
                        + ny_ * normals_w[j, yj, xj, 1]
                        + nz_ * normals_w[j, yj, xj, 2]
                    )
                    if dot < cos_min:
                        continue
                    sup_v[nsup] = j
                    sup_x[nsup] = xj
                    sup_y[nsup] = yj
                    nsup += 1
                    accx += qx
                    accy += qy
                    accz += qz
                    anx += normals_w[j, yj, xj, 0]
                    any_ += normals_w[j, yj, xj, 1]
                    anz += normals_w[j, yj, xj, 2]
                    ag += grays[j, yj, xj]
                if nsup + 1 < min_views:
                    continue
                inv = 1.0 / (nsup + 1)
                out_pos[count, 0] = accx * inv
                out_pos[count, 1] = accy * inv
                out_pos[count, 2] = accz * inv
                nn = math.sqrt(anx * anx + any_ * any_ + anz * anz)
                if nn < 1e-12:
                    nn = 1.0
                out_nrm[count, 0] = anx / nn
                out_nrm[count, 1] = any_ / nn
                out_nrm[count, 2] = anz / nn
                out_gray[count] = ag * inv
                count += 1
                consumed[i, y, x] = True
                for s in range(nsup):
                    consumed[sup_v[s], sup_y[s], sup_x[s]] = True
    return count


def fuse_depth_maps(
    depth_maps: list[DepthMapBuffer],
    normal_maps: list[np.ndarray],
    cams: list[CameraModel],
    cfg: RunConfig | None = None,
    images: list[np.ndarray] | None = None,
) -> PointCloud:
    """Fuse per-view maps into one world-frame oriented point cloud.

    Normal maps are camera-frame (as produced by the engine); views must
    share a single image size.
    """
    cfg = cfg or RunConfig()
    n = len(depth_maps)
    if not (n == len(normal_maps) == len(cams)):
        raise ValueError("depth maps, normal maps and cameras count differ")
    if n == 0:
        raise ValueError("no views to fuse")
    h, w = depth_maps[0].values.shape
    for dm in depth_maps:
        if dm.values.shape != (h, w):
            raise ValueError("fusion requires equal image sizes across views")

    depths = np.stack([dm.values.astype(np.float64) for dm in depth_maps])
    valid = np.stack([dm.valid & (dm.values > 0) for dm in depth_maps])
    K = np.stack([c.K for c in cams])
    R = np.stack([c.R for c in cams])
    T = np.stack([c.T for c in cams])
    heights = np.array([c.height for c in cams], dtype=np.int64)
    widths = np.array([c.width for c in cams], dtype=np.int64)

    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    points_w = np.empty((n, h, w, 3))
    normals_w = np.empty((n, h, w, 3))
    for i, cam in enumerate(cams):
        Kinv = np.linalg.inv(cam.K)
        rays = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ Kinv.T
        Xc = depths[i][..., None] * rays
        points_w[i] = (Xc - cam.T) @ cam.R
        nm = np.asarray(normal_maps[i], dtype=np.float64)
        normals_w[i] = nm @ cam.R

    if images is not None:
        grays = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    else:
        grays = np.full((n, h, w), 0.5)

    cap = int(valid.sum())
    out_pos = np.empty((max(cap, 1), 3))
    out_nrm = np.empty((max(cap, 1), 3))
    out_gray = np.empty(max(cap, 1))
    count = _fuse_kernel(
        depths, valid, normals_w, points_w, grays,
        K, R, T, heights, widths,
        cfg.fusion_min_views, cfg.fusion_max_reproj,
        cfg.fusion_max_rel_diff,
        math.cos(math.radians(cfg.fusion_max_normal_deg)),
        out_pos, out_nrm, out_gray,
    )
    g8 = np.clip(out_gray[:count] * 255.0, 0, 255).astype(np.uint8)
    colors = np.repeat(g8[:, None], 3, axis=1)
    return PointCloud(
        out_pos[:count].astype(np.float32),
        out_nrm[:count].astype(np.float32),
        colors,
    )
