import numpy as np
import pytest

from pdmvs.config import RunConfig
from pdmvs.synth import generate_scene


@pytest.fixture(scope="session")
def tiny_plane_scene():
    """Small textured plane: cheap enough for per-test engine runs."""
    return generate_scene("textured-plane", seed=0, width=96, height=72, n_views=3)


@pytest.fixture(scope="session")
def small_wall_scene():
    return generate_scene("textureless-wall", seed=1, width=160, height=120, n_views=4)


@pytest.fixture(scope="session")
def small_occlusion_scene():
    return generate_scene("occlusion-box", seed=2, width=160, height=120, n_views=4)


@pytest.fixture(scope="session")
def small_lscene():
    # wide enough that the in-plane depth gradient of the normalized
    # mono depth stays below the edge threshold
    return generate_scene("two-plane-L", seed=3, width=960, height=720, n_views=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def scene_config(scene, **overrides) -> RunConfig:
    base = dict(d_min=scene.d_min, d_max=scene.d_max)
    base.update(overrides)
    return RunConfig(**base)
