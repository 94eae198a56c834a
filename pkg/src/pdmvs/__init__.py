"""pdmvs: CPU multi-view stereo with deformable PatchMatch patches,
plane-region depth priors and cross-view visibility handling."""

__version__ = "0.1.0"

from .config import RunConfig, load_config, save_config
from .engine import PatchmatchPipeline, run_pipeline
from .evalmetrics import EvalReport, evaluate
from .fusion import fuse_depth_maps
from .scene_io import (
    CameraModel,
    DepthMapBuffer,
    PointCloud,
    load_scene,
    read_depth_map,
    read_point_cloud,
    write_depth_map,
    write_point_cloud,
)
from .synth import SCENE_SPECS, generate_scene

__all__ = [
    "CameraModel",
    "DepthMapBuffer",
    "EvalReport",
    "PatchmatchPipeline",
    "PointCloud",
    "RunConfig",
    "SCENE_SPECS",
    "evaluate",
    "fuse_depth_maps",
    "generate_scene",
    "load_config",
    "load_scene",
    "read_depth_map",
    "read_point_cloud",
    "run_pipeline",
    "save_config",
    "write_depth_map",
    "write_point_cloud",
    "__version__",
]
