"""Depth-edge aligned prior.

Builds a region map for one reference view from its grayscale image and
a normalized monocular depth map: Roberts edges, connected non-edge
regions, RANSAC plane fits in (x/W, y/H, depth) space, a region-level
erosion/dilation alignment pass, and pixel-wise boundary filtering.

Region labels: >= 0 real regions, LABEL_EDGE for edge/boundary pixels,
LABEL_UNASSIGNED for non-edge components too small to planarize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import RunConfig

LABEL_EDGE = -1
LABEL_UNASSIGNED = -2

_STRUCT4 = ndimage.generate_binary_structure(2, 1)   # cross
_STRUCT8 = ndimage.generate_binary_structure(2, 2)   # full 3x3


class DegenerateFitError(Exception):
    pass


@dataclass
class EdgeMap:
    magnitude: np.ndarray
    flags: np.ndarray


@dataclass
class RegionRecord:
    id: int
    pixel_count: int
    normal: np.ndarray | None = None
    offset: float = 0.0
    inlier_ratio: float = 0.0

    @property
    def plane(self):
        return None if self.normal is None else (self.normal, self.offset)


@dataclass
class RegionMap:
    labels: np.ndarray
    records: dict[int, RegionRecord] = field(default_factory=dict)

    def label_at(self, p) -> int:
        return int(self.labels[int(p[1]), int(p[0])])


def normalize_mono_depth(depth: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0,1]; a constant map becomes all 0.5."""
    depth = np.asarray(depth, dtype=np.float64)
    lo = float(depth.min())
    hi = float(depth.max())
    if hi - lo < 1e-12:
        return np.full_like(depth, 0.5)
    return (depth - lo) / (hi - lo)


def _roberts_magnitude(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    mag = np.zeros_like(img)
    d1 = img[:-1, :-1] - img[1:, 1:]
    d2 = img[1:, :-1] - img[:-1, 1:]
    mag[:-1, :-1] = np.hypot(d1, d2)
    # replicate into the last row/column (the 2x2 stencil is undefined
    # there); otherwise every edge line stops one pixel short of the
    # border and regions leak around it
    mag[-1, :] = mag[-2, :]
    mag[:, -1] = mag[:, -2]
    return mag


def roberts_edges(
    mono_depth: np.ndarray, image: np.ndarray, cfg: RunConfig | None = None
) -> EdgeMap:
    """Roberts-cross edges of the image, combined with the depth-gradient
    homogeneity test (pixels with mono-depth gradient above eps_grad are
    treated as edges so regions stay depth-continuous)."""
    cfg = cfg or RunConfig()
    if mono_depth.shape != image.shape:
        raise ValueError("mono depth and image dimensions differ")
    mag = _roberts_magnitude(image)
    depth_mag = _roberts_magnitude(mono_depth)
    flags = (mag > cfg.roberts_threshold) | (depth_mag > cfg.eps_grad)
    return EdgeMap(magnitude=mag.astype(np.float32), flags=flags)


def label_regions(edge_map: EdgeMap, cfg: RunConfig | None = None) -> RegionMap:
    """4-connected components of the non-edge pixels; components below
    eta pixels stay unassigned."""
    cfg = cfg or RunConfig()
    comp, ncomp = ndimage.label(~edge_map.flags, structure=_STRUCT4)
    labels = np.full(edge_map.flags.shape, LABEL_EDGE, dtype=np.int32)
    records: dict[int, RegionRecord] = {}
    next_id = 0
    if ncomp:
        counts = np.bincount(comp.ravel(), minlength=ncomp + 1)
        for c in range(1, ncomp + 1):
            mask = comp == c
            if counts[c] < cfg.eta:
                labels[mask] = LABEL_UNASSIGNED
            else:
                labels[mask] = next_id
                records[next_id] = RegionRecord(next_id, int(counts[c]))
                next_id += 1
    return RegionMap(labels, records)


def _region_points(ys, xs, mono_depth):
    h, w = mono_depth.shape
    return np.column_stack([xs / w, ys / h, mono_depth[ys, xs]])


def fit_plane_ransac(
    points: np.ndarray,
    iterations: int,
    inlier_dist: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float]:
    """RANSAC plane fit; returns (unit normal, offset, inlier ratio) for
    the plane n . p + d = 0. Raises DegenerateFitError when no
    non-collinear sample is found."""
    n_pts = points.shape[0]
    if n_pts < 3:
        raise DegenerateFitError("fewer than 3 points")
    best_count = -1
    best_plane = None
    for _ in range(iterations):
        idx = rng.integers(0, n_pts, size=3)
        a, b, c = points[idx]
        normal = np.cross(b - a, c - a)
        nrm = np.linalg.norm(normal)
        if nrm < 1e-12:
            continue
        normal = normal / nrm
        offset = -float(normal @ a)
        dist = np.abs(points @ normal + offset)
        count = int((dist <= inlier_dist).sum())
        if count > best_count:
            best_count = count
            best_plane = (normal, offset)
    if best_plane is None:
        raise DegenerateFitError("all RANSAC samples collinear")
    # least-squares refinement on the inlier set
    normal, offset = best_plane
    inliers = points[np.abs(points @ normal + offset) <= inlier_dist]
    if inliers.shape[0] >= 3:
        centroid = inliers.mean(axis=0)
        _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
        cand = vt[-1]
        cand_off = -float(cand @ centroid)
        cand_count = int((np.abs(points @ cand + cand_off) <= inlier_dist).sum())
        if cand_count >= best_count:
            normal, offset, best_count = cand, cand_off, cand_count
    if normal[2] < 0:
        normal, offset = -normal, -offset
    return normal, offset, best_count / n_pts


def fit_region_plane(
    region_pixels,
    mono_depth: np.ndarray,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float]:
    """Plane fit of one region's (x/W, y/H, depth) samples."""
    ys, xs = region_pixels
    points = _region_points(np.asarray(ys), np.asarray(xs), mono_depth)
    return fit_plane_ransac(
        points, cfg.ransac_iterations, cfg.ransac_inlier_dist, rng
    )


def plane_similarity(
    plane_i, plane_j, depth_penalty: bool = False
) -> float:
    """n_i . n_j + min(1, |d_i - d_j|) (verbatim); the depth_penalty
    variant subtracts the clamped offset difference instead."""
    n_i, d_i = plane_i
    n_j, d_j = plane_j
    dot = float(np.dot(n_i, n_j))
    dd = min(1.0, abs(float(d_i) - float(d_j)))
    return dot - dd if depth_penalty else dot + dd


def _fit_into_record(rec: RegionRecord, region_map, mono_depth, cfg, rng) -> None:
    ys, xs = np.nonzero(region_map.labels == rec.id)
    rec.pixel_count = len(ys)
    try:
        normal, offset, ratio = fit_region_plane((ys, xs), mono_depth, cfg, rng)
    except DegenerateFitError:
        rec.normal = None
        rec.inlier_ratio = 0.0
        return
    rec.normal = normal
    rec.offset = offset
    rec.inlier_ratio = ratio


def fit_all_regions(
    region_map: RegionMap, mono_depth: np.ndarray, cfg: RunConfig,
    rng: np.random.Generator,
) -> None:
    for rid in sorted(region_map.records):
        _fit_into_record(region_map.records[rid], region_map, mono_depth, cfg, rng)


def _point_plane_dist(points: np.ndarray, normal: np.ndarray, offset: float):
    return np.abs(points @ normal + offset)


def erode_regions(
    region_map: RegionMap, mono_depth: np.ndarray, cfg: RunConfig,
    rng: np.random.Generator,
) -> RegionMap:
    """Split regions that erosion disconnects into two better-planarized
    sub-regions (similarity <= sigma and mean inlier-ratio gain >= gamma)."""
    h, w = region_map.labels.shape
    worklist = sorted(region_map.records)
    while worklist:
        rid = worklist.pop(0)
        rec = region_map.records[rid]
        if rec.normal is None:
            continue
        mask = region_map.labels == rid
        eroded = mask
        parts = None
        for _ in range(cfg.max_erosion_rounds):
            eroded = ndimage.binary_erosion(eroded, structure=_STRUCT8)
            if not eroded.any():
                break
            comp, ncomp = ndimage.label(eroded, structure=_STRUCT4)
            if ncomp >= 2:
                parts = (comp, ncomp)
                break
        if parts is None:
            continue
        comp, ncomp = parts
        sizes = np.bincount(comp.ravel(), minlength=ncomp + 1)
        order = np.argsort(sizes[1:])[::-1] + 1
        seed_a, seed_b = order[0], order[1]
        seeds = np.zeros((h, w), dtype=np.int32)
        seeds[comp == seed_a] = 1
        seeds[comp == seed_b] = 2
        # grow the two seeds back over the whole region
        dist_bg = seeds == 0
        _, (iy, ix) = ndimage.distance_transform_edt(dist_bg, return_indices=True)
        assign = seeds[iy, ix]
        sub_a = mask & (assign == 1)
        sub_b = mask & (assign == 2)
        if sub_a.sum() < cfg.eta or sub_b.sum() < cfg.eta:
            continue
        try:
            na, da, ra = fit_region_plane(np.nonzero(sub_a), mono_depth, cfg, rng)
            nb, db, rb = fit_region_plane(np.nonzero(sub_b), mono_depth, cfg, rng)
        except DegenerateFitError:
            continue
        if rec.inlier_ratio <= 0:
            continue
        sim = plane_similarity((na, da), (nb, db), cfg.depth_penalty_similarity)
        gain = (ra + rb) / (2.0 * rec.inlier_ratio)
        if not (sim <= cfg.sigma and gain >= cfg.gamma):
            continue
        # commit the split along the grown-back seed assignment
        ys, xs = np.nonzero(mask)
        final_b = assign[ys, xs] == 2
        new_id = max(region_map.records) + 1
        region_map.labels[ys[final_b], xs[final_b]] = new_id
        rec_b = RegionRecord(new_id, int(final_b.sum()))
        region_map.records[new_id] = rec_b
        _fit_into_record(rec, region_map, mono_depth, cfg, rng)
        _fit_into_record(rec_b, region_map, mono_depth, cfg, rng)
        worklist.extend([rid, new_id])
    return region_map


def _adjacent_pairs(region_map: RegionMap):
    pairs = set()
    for rid in sorted(region_map.records):
        mask = region_map.labels == rid
        if not mask.any():
            continue
        # both regions grow toward each other: dilating one side twice
        # bridges the one-pixel boundary lines the edge detector leaves
        # between touching regions
        dil = ndimage.binary_dilation(mask, structure=_STRUCT8, iterations=2)
        touched = np.unique(region_map.labels[dil])
        for other in touched:
            if other >= 0 and other != rid:
                pairs.add((min(rid, int(other)), max(rid, int(other))))
    return sorted(pairs)


def dilate_merge(
    region_map: RegionMap, mono_depth: np.ndarray, cfg: RunConfig,
    rng: np.random.Generator,
) -> RegionMap:
    """Merge adjacent regions whose planes are similar (>= sigma) and
    both reliable (inlier ratio >= kappa); iterates to a fixpoint."""
    changed = True
    while changed:
        changed = False
        for ra_id, rb_id in _adjacent_pairs(region_map):
            ra = region_map.records.get(ra_id)
            rb = region_map.records.get(rb_id)
            if ra is None or rb is None or ra.normal is None or rb.normal is None:
                continue
            if ra.inlier_ratio < cfg.kappa or rb.inlier_ratio < cfg.kappa:
                continue
            sim = plane_similarity(
                (ra.normal, ra.offset), (rb.normal, rb.offset),
                cfg.depth_penalty_similarity,
            )
            if sim < cfg.sigma:
                continue
            region_map.labels[region_map.labels == rb_id] = ra_id
            del region_map.records[rb_id]
            _fit_into_record(ra, region_map, mono_depth, cfg, rng)
            changed = True
            break
    return region_map


def filter_boundary_pixels(
    region_map: RegionMap, mono_depth: np.ndarray, cfg: RunConfig,
) -> RegionMap:
    """Absorb edge/unassigned pixels into adjacent reliable regions when
    their (x/W, y/H, depth) point lies within delta of the region plane;
    ties go to the smallest point-to-plane distance. Iterates until no
    pixel changes."""
    h, w = region_map.labels.shape
    reliable = {
        rid: rec
        for rid, rec in region_map.records.items()
        if rec.normal is not None and rec.inlier_ratio >= cfg.kappa
    }
    if not reliable:
        return region_map
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    while True:
        labels = region_map.labels
        unass = np.nonzero(labels < 0)
        if len(unass[0]) == 0:
            break
        best_dist = np.full(len(unass[0]), np.inf)
        best_label = np.full(len(unass[0]), LABEL_EDGE, dtype=np.int32)
        ys, xs = unass
        pts = _region_points(ys, xs, mono_depth)
        # candidate labels among 8-neighbors
        neigh = np.full((len(ys), len(offsets)), LABEL_EDGE, dtype=np.int32)
        for k, (dy, dx) in enumerate(offsets):
            yy = np.clip(ys + dy, 0, h - 1)
            xx = np.clip(xs + dx, 0, w - 1)
            neigh[:, k] = labels[yy, xx]
        for rid, rec in reliable.items():
            has_rid = (neigh == rid).any(axis=1)
            if not has_rid.any():
                continue
            dist = _point_plane_dist(pts, rec.normal, rec.offset)
            take = has_rid & (dist <= cfg.delta) & (dist < best_dist)
            best_dist[take] = dist[take]
            best_label[take] = rid
        absorbed = best_label != LABEL_EDGE
        if not absorbed.any():
            break
        labels[ys[absorbed], xs[absorbed]] = best_label[absorbed]
        for rid in np.unique(best_label[absorbed]):
            region_map.records[int(rid)].pixel_count += int(
                (best_label[absorbed] == rid).sum()
            )
    return region_map


def filter_anchors_by_region(p, anchors, region_map: RegionMap):
    """Keep anchors sharing p's region label; pass-through when p has no
    region."""
    lp = region_map.label_at(p)
    if lp < 0:
        return list(anchors)
    return [s for s in anchors if region_map.label_at(s) == lp]


def build_region_prior(
    mono_depth: np.ndarray,
    image: np.ndarray,
    cfg: RunConfig,
    seed: int = 0,
) -> RegionMap:
    """Full prior pipeline for one view. mono_depth must be normalized
    to [0, 1] (see normalize_mono_depth)."""
    rng = np.random.default_rng(seed)
    edges = roberts_edges(mono_depth, image, cfg)
    region_map = label_regions(edges, cfg)
    fit_all_regions(region_map, mono_depth, cfg, rng)
    erode_regions(region_map, mono_depth, cfg, rng)
    dilate_merge(region_map, mono_depth, cfg, rng)
    filter_boundary_pixels(region_map, mono_depth, cfg)
    return region_map
