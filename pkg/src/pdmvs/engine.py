"""PatchMatch engine: per-view hypothesis state and the iteration loop
(checkerboard propagation, interval-constrained refinement, visibility
weighting with restoration, deformable anchors gated by the region
prior).

Every view finishes an iteration before any view starts the next one, so
cross-view restoration always reads a consistent snapshot of the other
views' depths.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .config import RunConfig
from .edge_prior import RegionMap, build_region_prior
from .kernels import COST_MAX
from .scene_io import CameraModel, DepthMapBuffer
from .visibility import init_view_weights, pair_geometry, restore_visibility

logger = logging.getLogger("pdmvs")

PROP_DIRS = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    dtype=np.int64,
)
PROP_STEPS = np.array([1, 3, 5], dtype=np.int64)


def sector_directions(n_sectors: int = 8) -> np.ndarray:
    """Unit bisector directions of n equal sectors around a pixel."""
    ang = 2.0 * np.pi * (np.arange(n_sectors) + 0.5) / n_sectors
    return np.column_stack([np.cos(ang), np.sin(ang)])


def classify_reliability(agg_costs: np.ndarray, tau_rel: float) -> np.ndarray:
    """Pixels whose aggregated cost is below tau_rel are reliable."""
    return np.asarray(agg_costs) < tau_rel


def search_anchors(
    reliable: np.ndarray,
    step: int,
    r_max: int,
    region_map: RegionMap | None = None,
    n_sectors: int = 8,
    footprint_pad: int = 0,
):
    """Per unreliable pixel, the first reliable pixel along each sector
    bisector ((-1, -1) when a sector has none), optionally restricted to
    the pixel's own prior region.

    With ``footprint_pad > 0`` a pixel is only eligible as an anchor when
    its whole (2*pad+1)-square patch footprint stays inside one labeled
    region: patches sampled across a depth boundary mix foreground and
    background and would poison the deformed cost."""
    h, w = reliable.shape
    eligible = reliable
    if region_map is not None and footprint_pad > 0:
        eligible = reliable & _footprint_clear(region_map.labels, footprint_pad)
    anchors = np.empty((h, w, n_sectors, 2), dtype=np.int32)
    counts = np.zeros((h, w), dtype=np.int32)
    kernels.search_anchor_pixels(
        np.ascontiguousarray(eligible),
        sector_directions(n_sectors),
        step,
        r_max,
        anchors,
        counts,
    )
    if region_map is not None:
        _filter_anchor_regions(anchors, counts, region_map.labels)
    return anchors, counts


def _footprint_clear(labels: np.ndarray, pad: int) -> np.ndarray:
    """True where every pixel of the centered (2*pad+1)-square neighborhood
    carries the same non-negative region label."""
    size = 2 * pad + 1
    clear = np.zeros(labels.shape, dtype=bool)
    for rid in np.unique(labels):
        if rid < 0:
            continue
        clear |= ndimage.minimum_filter(labels == rid, size=size, mode="nearest")
    return clear


def _filter_anchor_regions(anchors, counts, labels):
    """Drop anchors whose region label differs from their pixel's label;
    unlabeled pixels keep all anchors."""
    h, w, nsec, _ = anchors.shape
    px_labels = labels[:, :, None]
    ax = anchors[..., 0]
    ay = anchors[..., 1]
    have = ax >= 0
    al = np.full(ax.shape, -3, dtype=labels.dtype)
    al[have] = labels[ay[have], ax[have]]
    drop = have & (px_labels >= 0) & (al != px_labels)
    anchors[..., 0][drop] = -1
    anchors[..., 1][drop] = -1
    counts[:] = (anchors[..., 0] >= 0).sum(axis=2)


def viewing_directions(p, depth, cam_i, cams_src, weights_px) -> np.ndarray:
    """Unit viewing directions (reference first, then every visible
    source) toward the pixel's 3D point, in the reference camera frame."""
    Kinv = np.linalg.inv(cam_i.K)
    X = depth * (Kinv @ np.array([p[0], p[1], 1.0]))
    dirs = [X / np.linalg.norm(X)]
    for j, cam_j in enumerate(cams_src):
        if weights_px[j] <= 0.0:
            continue
        c_rel = cam_i.R @ (cam_j.center - cam_i.center)
        v = X - c_rel
        dirs.append(v / np.linalg.norm(v))
    return np.array(dirs)


def is_normal_admissible(n, dirs) -> bool:
    """A normal is admissible when it faces every viewing direction."""
    return bool((np.asarray(dirs) @ np.asarray(n) <= 0.0).all())


def aggregate_depth_interval(
    p, depth, cam_i, cams_src, weights_px, cfg: RunConfig
):
    """(near_lo, near_hi, far_lo, far_hi) refinement interval pair from
    epipolar offsets across the visible views."""
    geom = pair_geometry(cam_i, cams_src)
    out = np.empty(4)
    kernels.depth_interval(
        int(p[0]), int(p[1]), float(depth),
        geom["G1"], geom["P2"], geom["Kinv"],
        np.asarray(weights_px, dtype=np.float64),
        cfg.alpha, cfg.beta, cfg.mu, cfg.d_min, cfg.d_max, out,
    )
    return out


@dataclass
class ViewResult:
    depth: DepthMapBuffer
    normals: np.ndarray
    costs: np.ndarray            # current-regime aggregated costs
    best_costs: np.ndarray       # monotone best aggregated cost envelope
    weights: np.ndarray          # (H, W, nsrc) final visibility weights
    region_map: RegionMap | None
    source_indices: list[int]


@dataclass
class _ViewState:
    cam: CameraModel
    image: np.ndarray
    sources: list[int]
    geom: dict
    src_images: np.ndarray = None
    normals: np.ndarray = None
    depths: np.ndarray = None
    costs_cur: np.ndarray = None
    costs_best: np.ndarray = None
    weights: np.ndarray = None
    anchors: np.ndarray = None
    anchor_counts: np.ndarray = None
    reliable: np.ndarray = None
    forced: np.ndarray = None
    region_map: RegionMap | None = None
    trace: list = field(default_factory=list)


def _aggregate_map(view_costs, weights):
    # pixels whose weights are all zero have no visibility estimate;
    # score them by the plain mean so they stay comparable (and hence
    # rescuable) instead of pinning them at COST_MAX
    sw = weights.sum(axis=2)
    num = (weights * view_costs).sum(axis=2)
    return np.where(
        sw > 0, num / np.where(sw > 0, sw, 1.0), view_costs.mean(axis=2)
    )


class PatchmatchPipeline:
    """Multi-view PatchMatch over one scene.

    images: per-view float32 grayscale in [0, 1]
    mono_depths: per-view normalized monocular depth (or None to skip
    the region prior)
    """

    def __init__(
        self,
        images: list[np.ndarray],
        cams: list[CameraModel],
        mono_depths: list[np.ndarray] | None,
        cfg: RunConfig,
        record_trace: bool = False,
    ):
        if len(images) != len(cams):
            raise ValueError("images and cameras count differ")
        if len(images) < 2:
            raise ValueError("at least two views required")
        if not (0 < cfg.d_min < cfg.d_max):
            raise ValueError("config must set 0 < d_min < d_max")
        self.cfg = cfg
        self.record_trace = record_trace
        n = len(images)
        self.views: list[_ViewState] = []
        for i in range(n):
            cam = cams[i]
            img = np.ascontiguousarray(images[i], dtype=np.float32)
            if img.shape != (cam.height, cam.width):
                raise ValueError(f"image {i} does not match camera {i} size")
            sources = [j for j in range(n) if j != i]
            geom = pair_geometry(cam, [cams[j] for j in sources])
            self.views.append(_ViewState(cam, img, sources, geom))
        for i, vs in enumerate(self.views):
            vs.src_images = np.stack(
                [self.views[j].image for j in vs.sources]
            )
        self._build_priors(mono_depths)
        self._init_state()

    def _build_priors(self, mono_depths):
        cfg = self.cfg
        for i, vs in enumerate(self.views):
            if not cfg.use_edge_prior or mono_depths is None:
                continue
            try:
                vs.region_map = build_region_prior(
                    np.asarray(mono_depths[i], dtype=np.float64),
                    vs.image.astype(np.float64),
                    cfg,
                    seed=cfg.seed + i,
                )
            except Exception:
                logger.warning("region prior failed for view %d; skipping", i)
                vs.region_map = None

    def _init_state(self):
        cfg = self.cfg
        for i, vs in enumerate(self.views):
            h, w = vs.cam.height, vs.cam.width
            nsrc = len(vs.sources)
            vs.normals = np.empty((h, w, 3))
            vs.depths = np.empty((h, w))
            kernels.init_hypotheses(
                cfg.seed, i, vs.geom["Kinv"], w, h,
                cfg.d_min, cfg.d_max, vs.normals, vs.depths,
            )
            vs.costs_cur = np.full((h, w), COST_MAX)
            vs.costs_best = np.full((h, w), COST_MAX)
            vs.weights = np.full((h, w, nsrc), 1.0)
            vs.anchors = np.full((h, w, cfg.num_anchors, 2), -1, dtype=np.int32)
            vs.anchor_counts = np.zeros((h, w), dtype=np.int32)
            vs.reliable = np.ones((h, w), dtype=bool)
            vs.forced = np.zeros((h, w), dtype=bool)

    def _view_costs(self, vs: _ViewState, use_deform: bool):
        cfg = self.cfg
        h, w = vs.image.shape
        out = np.empty((h, w, len(vs.sources)))
        kernels.compute_view_costs(
            vs.image, vs.src_images, vs.geom["P1"], vs.geom["P2"],
            vs.geom["Kinv"], vs.normals, vs.depths,
            vs.anchors, vs.anchor_counts, vs.weights, use_deform,
            cfg.patch_size, cfg.central_stride, cfg.anchor_stride,
            cfg.bilateral_sigma, cfg.lam, out,
        )
        return out

    def _update_envelope(self, vs: _ViewState):
        np.minimum(vs.costs_best, vs.costs_cur, out=vs.costs_best)

    def run_iteration(self, it: int, depth_snapshots: list[DepthMapBuffer]):
        cfg = self.cfg
        constraint_on = cfg.use_geom_constraints and it >= cfg.constraint_start
        for i, vs in enumerate(self.views):
            h, w = vs.image.shape
            use_deform = cfg.use_deformation and it >= cfg.warmup_iterations

            # reliability and anchors from the incumbent costs
            if use_deform:
                vs.reliable = classify_reliability(vs.costs_cur, cfg.tau_rel)
                r_max = max(h, w) // 3
                vs.anchors, vs.anchor_counts = search_anchors(
                    vs.reliable, cfg.anchor_step, r_max,
                    vs.region_map, cfg.num_anchors,
                    footprint_pad=cfg.patch_size // 2,
                )
            else:
                vs.reliable = np.ones((h, w), dtype=bool)
                vs.anchor_counts[:] = 0

            # per-view costs of the incumbent, then fresh weights; the
            # visibility prior covers both halves of per-view weighting:
            # estimating visibility from photometric cost and restoring
            # geometrically consistent views that the estimate zeroed out.
            # With the prior disabled every source view weighs in equally.
            view_costs = self._view_costs(vs, use_deform)
            if cfg.use_visibility_prior:
                vs.weights = init_view_weights(
                    view_costs, cfg.tau_good, cfg.weight_bandwidth
                )
                if it >= 2:
                    vs.weights = restore_visibility(
                        vs.weights, vs.cam,
                        [self.views[j].cam for j in vs.sources],
                        depth_snapshots[i],
                        [depth_snapshots[j] for j in vs.sources],
                        cfg.eps_reproj, cfg.w_min_restored,
                    )
            else:
                vs.weights = np.ones(view_costs.shape, dtype=np.float64)
            vs.costs_cur = _aggregate_map(view_costs, vs.weights)
            self._update_envelope(vs)
            if self.record_trace:
                vs.trace.append(("reweight", it, vs.costs_cur.copy()))

            for phase in (0, 1):
                normals_in = vs.normals.copy()
                depths_in = vs.depths.copy()
                kernels.propagate_phase(
                    phase, vs.image, vs.src_images,
                    vs.geom["P1"], vs.geom["P2"], vs.geom["Kinv"],
                    vs.geom["c_rel"],
                    normals_in, depths_in, vs.normals, vs.depths,
                    vs.costs_cur, vs.weights, vs.anchors, vs.anchor_counts,
                    vs.weights, vs.reliable, use_deform, constraint_on,
                    cfg.d_min, cfg.d_max, cfg.patch_size,
                    cfg.central_stride, cfg.anchor_stride,
                    cfg.bilateral_sigma, cfg.lam, PROP_DIRS, PROP_STEPS,
                )
                self._update_envelope(vs)
                if self.record_trace:
                    vs.trace.append((f"propagate{phase}", it, vs.costs_cur.copy()))

            kernels.refine_all(
                it, cfg.seed, i, vs.image, vs.src_images,
                vs.geom["P1"], vs.geom["P2"], vs.geom["G1"],
                vs.geom["Kinv"], vs.geom["c_rel"],
                vs.normals, vs.depths, vs.costs_cur, vs.weights,
                vs.anchors, vs.anchor_counts, vs.weights, vs.reliable,
                use_deform, constraint_on,
                cfg.d_min, cfg.d_max, cfg.alpha, cfg.beta, cfg.mu,
                cfg.patch_size, cfg.central_stride, cfg.anchor_stride,
                cfg.bilateral_sigma, cfg.lam, vs.forced,
            )
            self._update_envelope(vs)
            if self.record_trace:
                vs.trace.append(("refine", it, vs.costs_cur.copy()))

    def _depth_snapshot(self, vs: _ViewState) -> DepthMapBuffer:
        vals = vs.depths.astype(np.float32)
        valid = vs.costs_cur < COST_MAX
        return DepthMapBuffer(np.where(valid, vals, np.float32(-1.0)), valid)

    def run(self) -> list[ViewResult]:
        cfg = self.cfg
        for it in range(cfg.iterations):
            snapshots = [self._depth_snapshot(vs) for vs in self.views]
            logger.info("iteration %d/%d", it + 1, cfg.iterations)
            self.run_iteration(it, snapshots)
        results = []
        for vs in self.views:
            results.append(
                ViewResult(
                    depth=self._depth_snapshot(vs),
                    normals=vs.normals.copy(),
                    costs=vs.costs_cur.copy(),
                    best_costs=vs.costs_best.copy(),
                    weights=vs.weights.copy(),
                    region_map=vs.region_map,
                    source_indices=list(vs.sources),
                )
            )
        return results


def run_pipeline(
    images, cams, mono_depths, cfg: RunConfig, record_trace: bool = False
):
    """Convenience wrapper: build the engine and run all iterations."""
    pipe = PatchmatchPipeline(images, cams, mono_depths, cfg, record_trace)
    results = pipe.run()
    if record_trace:
        return results, [vs.trace for vs in pipe.views]
    return results
