"""Run configuration with the published defaults.

The core parameter set {eta, sigma, gamma, kappa, delta, eps_reproj,
alpha, beta, mu} defaults to {300, 0.5, 1.2, 0.7, 0.8, 2, 1, 4, 3};
patch blending lambda = 0.25 with at most 8 anchors and a depth-gradient
threshold of 0.005.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass
class RunConfig:
    # region prior
    eta: int = 300                 # minimum region size for planarization
    sigma: float = 0.5             # plane-similarity gate for erosion/dilation
    gamma: float = 1.2             # inlier-ratio improvement gate for splits
    kappa: float = 0.7             # minimum reliable inlier ratio
    delta: float = 0.8             # point-to-plane gate for boundary filtering
    eps_grad: float = 0.005        # depth-gradient threshold for homogeneity
    roberts_threshold: float = 0.03
    ransac_iterations: int = 256
    ransac_inlier_dist: float = 0.01
    depth_penalty_similarity: bool = False  # similarity variant with -min(1,|dd|)
    max_erosion_rounds: int = 5

    # visibility prior
    eps_reproj: float = 2.0        # reprojection gate for visibility restoration
    tau_good: float = 0.8          # cost cutoff for positive view weights
    weight_bandwidth: float = 0.3
    w_min_restored: float = 0.1
    anchor_visibility_at_anchor: bool = True

    # refinement geometry
    alpha: float = 1.0             # inner epipolar offset (pixels)
    beta: float = 4.0              # extra outer epipolar offset (pixels)
    mu: int = 3                    # order statistic across visible views

    # patch / cost
    lam: float = 0.25              # central-patch weight in the deformable cost
    num_anchors: int = 8
    patch_size: int = 11
    central_stride: int = 5
    anchor_stride: int = 2
    bilateral_sigma: float = 0.2

    # engine
    iterations: int = 8
    warmup_iterations: int = 2
    tau_rel: float = 0.5           # reliability threshold on aggregated cost
    constraint_start: int = 3      # first iteration with normal constraints
    anchor_step: int = 2           # sector walk step in pixels
    seed: int = 0
    threads: int = 0               # 0 = numba default

    # feature toggles (ablation)
    use_deformation: bool = True
    use_edge_prior: bool = True
    use_visibility_prior: bool = True
    use_geom_constraints: bool = True

    # depth range (per scene); <= 0 means derive from mono prior at runtime
    d_min: float = 0.0
    d_max: float = 0.0

    # fusion
    fusion_min_views: int = 2
    fusion_max_reproj: float = 2.0
    fusion_max_rel_diff: float = 0.01
    fusion_max_normal_deg: float = 30.0

    # evaluation
    tau_eval_fraction: float = 0.01  # fraction of scene diameter

    def updated(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    raw = raw.strip()
    if ftype == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {name}: {raw!r}")
    if ftype == "int":
        return int(raw)
    return float(raw)


def load_config(path: Path | str, base: RunConfig | None = None) -> RunConfig:
    """Read ``key = value`` lines; '#' starts a comment; unknown keys fail."""
    cfg = base or RunConfig()
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown parameter {key!r}")
        overrides[key] = _parse_value(key, raw)
    return cfg.updated(**overrides)


def save_config(cfg: RunConfig, path: Path | str) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
