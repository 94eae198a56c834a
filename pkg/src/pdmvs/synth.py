"""Synthetic ground-truth scenes.

Scenes are analytic (planes and axis-aligned boxes) and rendered by per
pixel ray casting, so depth maps, normal maps, visibility masks and the
ground-truth point cloud are mutually consistent by construction.

Available scene specs: textured-plane, two-plane-L, textureless-wall,
occlusion-box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .edge_prior import normalize_mono_depth
from .scene_io import (
    CameraModel,
    DepthMapBuffer,
    PointCloud,
    save_cameras,
    save_gray_image,
    write_depth_map,
    write_normal_map,
    write_point_cloud,
)

SCENE_SPECS = ("textured-plane", "two-plane-L", "textureless-wall", "occlusion-box")


class UnknownSceneError(ValueError):
    pass


def _smooth_texture(rng: np.random.Generator, n_waves, amp, k_lo, k_hi):
    """Sum-of-sines albedo over world coordinates; smooth enough to keep
    Roberts gradients small while giving patches usable variance."""
    ks = rng.uniform(k_lo, k_hi, size=n_waves)
    dirs = rng.normal(size=(n_waves, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phases = rng.uniform(0, 2 * np.pi, size=n_waves)

    def tex(X):
        acc = np.zeros(X.shape[:-1])
        for k, d, ph in zip(ks, dirs, phases):
            acc += np.sin(k * (X @ d) + ph)
        return 0.5 + amp * acc / np.sqrt(n_waves)

    return tex


def _constant_albedo(value):
    def tex(X):
        return np.full(X.shape[:-1], value)

    return tex


@dataclass
class _Plane:
    normal: np.ndarray            # world plane normal . X + offset = 0
    offset: float
    albedo: callable
    predicate: callable | None = None   # world-space region restriction

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        t = np.where(
            np.abs(denom) > 1e-12,
            -(origin @ self.normal + self.offset) / np.where(denom == 0, 1, denom),
            np.inf,
        )
        t = np.where(t > 1e-6, t, np.inf)
        X = origin + t[..., None] * dirs
        if self.predicate is not None:
            t = np.where(self.predicate(X), t, np.inf)
        n = np.broadcast_to(self.normal, X.shape)
        return t, n

    def sample_albedo(self, X):
        return self.albedo(X)


@dataclass
class _Box:
    lo: np.ndarray
    hi: np.ndarray
    albedo: callable

    def intersect(self, origin, dirs):
        inv = np.where(np.abs(dirs) > 1e-12, 1.0 / np.where(dirs == 0, 1, dirs), np.inf)
        t0 = (self.lo - origin) * inv
        t1 = (self.hi - origin) * inv
        tmin = np.minimum(t0, t1).max(axis=-1)
        tmax = np.maximum(t0, t1).min(axis=-1)
        hit = (tmax >= tmin) & (tmax > 1e-6)
        t = np.where(hit, np.where(tmin > 1e-6, tmin, tmax), np.inf)
        X = origin + t[..., None] * dirs
        # face normal: axis of the largest normalized excursion
        center = (self.lo + self.hi) / 2
        ext = (self.hi - self.lo) / 2
        rel = (X - center) / ext
        axis = np.argmax(np.abs(rel), axis=-1)
        n = np.zeros_like(X)
        idx = np.indices(axis.shape)
        n[(*idx, axis)] = np.sign(rel[(*idx, axis)])
        return t, n

    def sample_albedo(self, X):
        return self.albedo(X)


@dataclass
class SyntheticScene:
    name: str
    seed: int
    cams: list[CameraModel]
    image_names: list[str]
    images: list[np.ndarray]
    depth_maps: list[DepthMapBuffer]
    normal_maps: list[np.ndarray]          # camera-frame normals per view
    visibility: list[np.ndarray]           # (nsrc, H, W) bool per view
    source_indices: list[list[int]]
    gt_cloud: PointCloud
    d_min: float
    d_max: float
    probe_point: np.ndarray = field(default=None)
    probe_pixels: np.ndarray = field(default=None)

    @property
    def diameter(self) -> float:
        pos = self.gt_cloud.positions
        return float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))

    def mono_depths(self) -> list[np.ndarray]:
        """Normalized ground-truth depths standing in for a monocular prior."""
        return [
            normalize_mono_depth(np.where(dm.valid, dm.values, dm.values.max()))
            for dm in self.depth_maps
        ]

    def write_to_dir(self, outdir: Path | str) -> None:
        outdir = Path(outdir)
        (outdir / "images").mkdir(parents=True, exist_ok=True)
        (outdir / "gt_depth").mkdir(exist_ok=True)
        (outdir / "gt_normal").mkdir(exist_ok=True)
        (outdir / "mono_depth").mkdir(exist_ok=True)
        (outdir / "gt_visibility").mkdir(exist_ok=True)
        save_cameras(self.cams, self.image_names, outdir / "cameras.txt")
        for i, name in enumerate(self.image_names):
            stem = Path(name).stem
            save_gray_image(self.images[i], outdir / "images" / name)
            write_depth_map(self.depth_maps[i], outdir / "gt_depth" / f"{stem}.pfm")
            write_normal_map(self.normal_maps[i], outdir / "gt_normal" / f"{stem}.pfm")
            mono = DepthMapBuffer.from_values(
                np.clip(self.mono_depths()[i], 1e-6, 1.0).astype(np.float32)
            )
            write_depth_map(mono, outdir / "mono_depth" / f"{stem}.pfm")
            np.save(outdir / "gt_visibility" / f"{stem}.npy", self.visibility[i])
        write_point_cloud(self.gt_cloud, outdir / "gt_cloud.ply")
        meta = [
            f"name = {self.name}",
            f"seed = {self.seed}",
            f"d_min = {self.d_min!r}",
            f"d_max = {self.d_max!r}",
            f"diameter = {self.diameter!r}",
        ]
        (outdir / "scene.txt").write_text("\n".join(meta) + "\n")


def _look_at_camera(center, target, focal, width, height) -> CameraModel:
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    forward /= np.linalg.norm(forward)
    down = np.array([0.0, 1.0, 0.0])
    right = np.cross(down, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    T = -R @ center
    K = np.array(
        [[focal, 0, (width - 1) / 2.0], [0, focal, (height - 1) / 2.0], [0, 0, 1]]
    )
    return CameraModel(K, R, T, width, height)


def _render(cam: CameraModel, surfaces, noise, rng):
    h, w = cam.height, cam.width
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    Kinv = np.linalg.inv(cam.K)
    dirs_cam = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ Kinv.T
    dirs_world = dirs_cam @ cam.R  # R^T applied to each direction
    origin = cam.center

    depth = np.full((h, w), np.inf)
    image = np.full((h, w), 0.0)
    normal_w = np.zeros((h, w, 3))
    for surf in surfaces:
        t, n = surf.intersect(origin, dirs_world)
        closer = t < depth
        if not closer.any():
            continue
        X = origin + t[..., None] * dirs_world
        # missed rays carry non-finite coordinates; zero them so albedo
        # callbacks stay warning-free (their values are masked out below)
        X = np.where(np.isfinite(X), X, 0.0)
        alb = surf.sample_albedo(X)
        depth = np.where(closer, t, depth)
        image = np.where(closer, alb, image)
        normal_w = np.where(closer[..., None], n, normal_w)
    hit = np.isfinite(depth)
    depth = np.where(hit, depth, -1.0)
    # make surface normals face the camera
    X = origin + np.where(hit, depth, 1.0)[..., None] * dirs_world
    to_cam = origin - X
    flip = (normal_w * to_cam).sum(axis=-1) < 0
    normal_w = np.where(flip[..., None], -normal_w, normal_w)
    normal_cam = normal_w @ cam.R.T
    if noise > 0:
        image = image + rng.uniform(-noise, noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image, DepthMapBuffer.from_values(depth.astype(np.float32)), \
        normal_cam.astype(np.float32), dirs_world


def _visibility_masks(cams, depth_maps, dirs_all):
    """(nsrc, H, W) z-buffer visibility of each view's pixels in every
    other view, plus the source index lists."""
    n = len(cams)
    vis = []
    src_idx = []
    world_pts = []
    for i, cam in enumerate(cams):
        d = depth_maps[i].values.astype(np.float64)
        valid = depth_maps[i].valid
        X = cam.center + np.where(valid, d, 1.0)[..., None] * dirs_all[i]
        world_pts.append((X, valid))
    for i, cam in enumerate(cams):
        X, valid = world_pts[i]
        sources = [j for j in range(n) if j != i]
        src_idx.append(sources)
        masks = np.zeros((len(sources), cam.height, cam.width), dtype=bool)
        for sj, j in enumerate(sources):
            cj = cams[j]
            Xc = X @ cj.R.T + cj.T
            front = Xc[..., 2] > 1e-6
            zsafe = np.where(front, Xc[..., 2], 1.0)
            u = (Xc @ cj.K.T)
            px = u[..., 0] / (u[..., 2] + (~front))
            py = u[..., 1] / (u[..., 2] + (~front))
            xi = np.round(px).astype(np.int64)
            yi = np.round(py).astype(np.int64)
            inside = front & (xi >= 0) & (xi < cj.width) & (yi >= 0) & (yi < cj.height)
            xi = np.clip(xi, 0, cj.width - 1)
            yi = np.clip(yi, 0, cj.height - 1)
            dj = depth_maps[j].values[yi, xi].astype(np.float64)
            vj = depth_maps[j].valid[yi, xi]
            same = np.abs(dj - zsafe) <= 2e-3 * zsafe
            masks[sj] = valid & inside & vj & same
        vis.append(masks)
    return vis, src_idx


def _gt_cloud(cams, depth_maps, normal_maps, dirs_all, stride=2) -> PointCloud:
    pos = []
    nrm = []
    for i, cam in enumerate(cams):
        d = depth_maps[i].values[::stride, ::stride].astype(np.float64)
        valid = depth_maps[i].valid[::stride, ::stride]
        dirs = dirs_all[i][::stride, ::stride]
        X = cam.center + d[..., None] * dirs
        n_w = normal_maps[i][::stride, ::stride] @ cam.R
        pos.append(X[valid])
        nrm.append(n_w[valid])
    return PointCloud(np.concatenate(pos), np.concatenate(nrm))


def _camera_rig(n_views, spacing, target_z, focal, width, height):
    cams = []
    for k in range(n_views):
        cx = spacing * (k - (n_views - 1) / 2.0)
        cy = 0.12 * spacing * ((-1) ** k)
        cams.append(
            _look_at_camera((cx, cy, 0.0), (0.0, 0.0, target_z), focal, width, height)
        )
    return cams


def _build_surfaces(spec: str, rng: np.random.Generator):
    if spec == "textured-plane":
        tex = _smooth_texture(rng, 12, 0.12, 8.0, 20.0)
        n = np.array([0.12, 0.08, 1.0])
        n /= np.linalg.norm(n)
        return [_Plane(n, -10.0 * n[2], tex)]
    if spec == "two-plane-L":
        tex = _smooth_texture(rng, 8, 0.035, 2.0, 6.0)

        def tex_lscene(X):
            base = tex(X)
            x = X[..., 0]
            y = X[..., 1]
            # busy band along the crease, interrupted by a small gap: the
            # two plane regions stay connected only through a thin neck
            # that morphological erosion can cut.  The two diagonal
            # sinusoids keep the Roberts response high at every band
            # pixel except isolated points (their zero lines cross).
            crease_band = (np.abs(x) <= 0.04) & (np.abs(y) >= 0.04)
            k = 166.0
            busy = 0.5 + 0.25 * np.sin(k * (x + y)) + 0.25 * np.cos(k * (x - y))
            out = np.where(crease_band, busy, base)
            # spurious smooth dark stripe: splits the right plane into
            # coplanar regions that dilation should re-merge
            stripe = (x >= 1.6) & (x <= 2.0)
            return np.where(stripe, out * 0.45, out)

        slope = 0.35
        na = np.array([-slope, 0.0, 1.0])
        na /= np.linalg.norm(na)
        nb = np.array([slope, 0.0, 1.0])
        nb /= np.linalg.norm(nb)
        # both contain the crease line x = 0, z = 10
        plane_a = _Plane(na, -10.0 * na[2], tex_lscene, predicate=lambda X: X[..., 0] <= 0)
        plane_b = _Plane(nb, -10.0 * nb[2], tex_lscene, predicate=lambda X: X[..., 0] > 0)
        return [plane_a, plane_b]
    if spec == "textureless-wall":
        # sharper than the textured-plane albedo: matching must decorrelate
        # within a couple of pixels so bogus depths cannot ride on the
        # texture's autocorrelation
        tex = _smooth_texture(rng, 16, 0.16, 15.0, 35.0)

        def wall_albedo(X):
            flat = (
                (np.abs(X[..., 0]) <= 2.6) & (np.abs(X[..., 1]) <= 2.0)
            )
            return np.where(flat, 0.55, tex(X))

        box_tex = _smooth_texture(rng, 16, 0.16, 20.0, 50.0)
        wall = _Plane(np.array([0.0, 0.0, 1.0]), -10.0, wall_albedo)
        box = _Box(
            np.array([-0.6, -0.5, 6.0]), np.array([0.2, 0.3, 6.6]), box_tex
        )
        return [wall, box]
    if spec == "occlusion-box":
        box_tex = _smooth_texture(rng, 12, 0.14, 10.0, 24.0)
        wall = _Plane(np.array([0.0, 0.0, 1.0]), -10.0, _constant_albedo(0.55))
        box = _Box(
            np.array([-0.8, -0.7, 6.0]), np.array([0.8, 0.7, 7.0]), box_tex
        )
        return [wall, box]
    raise UnknownSceneError(f"unknown scene spec {spec!r}")


def generate_scene(
    spec: str,
    seed: int,
    width: int = 640,
    height: int = 480,
    n_views: int = 5,
    noise: float | None = None,
) -> SyntheticScene:
    """Deterministic synthetic scene with full ground truth.

    The textureless variants default to noise-free rendering: NCC is
    scale-invariant, so any amount of per-view noise would hand their
    constant-albedo areas fake matchable texture instead of the
    degenerate patches they exist to exercise.
    """
    if spec not in SCENE_SPECS:
        raise UnknownSceneError(f"unknown scene spec {spec!r}")
    if noise is None:
        noise = 0.0 if spec in ("textureless-wall", "occlusion-box") else 0.003
    rng = np.random.default_rng(seed)
    surfaces = _build_surfaces(spec, rng)
    spacing = 0.35 if spec == "occlusion-box" else 0.25
    focal = 1.1 * width
    cams = _camera_rig(n_views, spacing, 10.0, focal, width, height)

    images = []
    depth_maps = []
    normal_maps = []
    dirs_all = []
    for cam in cams:
        img, dm, nm, dirs = _render(cam, surfaces, noise, rng)
        images.append(img)
        depth_maps.append(dm)
        normal_maps.append(nm)
        dirs_all.append(dirs)

    vis, src_idx = _visibility_masks(cams, depth_maps, dirs_all)
    cloud = _gt_cloud(cams, depth_maps, normal_maps, dirs_all)

    all_depths = np.concatenate(
        [dm.values[dm.valid].ravel() for dm in depth_maps]
    )
    d_min = float(all_depths.min()) * 0.8
    d_max = float(all_depths.max()) * 1.2

    # off the rig's look-at target so each view sees it somewhere else
    probe = np.array([0.7, 0.4, 9.2])
    probe_px = []
    for cam in cams:
        Xc = cam.R @ probe + cam.T
        u = cam.K @ Xc
        probe_px.append(u[:2] / u[2])

    names = [f"view_{k:04d}.png" for k in range(n_views)]
    return SyntheticScene(
        name=spec,
        seed=seed,
        cams=cams,
        image_names=names,
        images=images,
        depth_maps=depth_maps,
        normal_maps=normal_maps,
        visibility=vis,
        source_indices=src_idx,
        gt_cloud=cloud,
        d_min=d_min,
        d_max=d_max,
        probe_point=probe,
        probe_pixels=np.array(probe_px),
    )
