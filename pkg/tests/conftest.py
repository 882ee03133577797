"""
Shared fixtures: small cameras, seeded generators and synthetic scenes.
"""

import numpy as np
import pytest

from msfusion.core.config import get_settings
from msfusion.domains.geometry.schemas import CameraIntrinsics, CameraPose
from msfusion.domains.synth.schemas import (
    AlbedoLayout,
    HeightfieldShape,
    LightRig,
    SceneSpec,
    SphereShape,
    SynthConfig,
)
from msfusion.domains.synth.service import generate_sequence, render_multispectral


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test sees the default environment."""
    for name in ("ENVIRONMENT", "LOG_FORMAT", "SENTRY_DSN", "PIPELINE_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(fx=40.0, fy=40.0, cx=15.5, cy=11.5, width=32, height=24)


def _sphere_config(image_size=96, **overrides) -> SynthConfig:
    """One keyframe looking at the unit sphere from distance 3."""
    params = dict(
        scene=SceneSpec(shape=SphereShape(), texture_contrast=0.3),
        image_size=image_size,
        n_keyframes=1,
        seed=7,
    )
    params.update(overrides)
    return SynthConfig(**params)


@pytest.fixture
def make_sphere_config():
    return _sphere_config


@pytest.fixture
def two_albedo_scene():
    return SceneSpec(
        shape=SphereShape(),
        albedos=[(0.9, 0.5, 0.3), (0.3, 0.6, 0.9)],
        layout=AlbedoLayout.LEFT_RIGHT,
        texture_contrast=0.0,
    )


@pytest.fixture
def sphere_render():
    """Untextured 128 x 128 sphere render with the default rig."""
    cfg = SynthConfig(image_size=128)
    pose = CameraPose(translation=(0.0, 0.0, -3.0))
    return (
        render_multispectral(cfg.scene, LightRig.default(), cfg.intrinsics(), pose), cfg
    )


@pytest.fixture
def sphere_sequence():
    return generate_sequence(_sphere_config())


@pytest.fixture
def heightfield_scene():
    return SceneSpec(shape=HeightfieldShape(amplitude=0.15, frequency=3.0, extent=1.0))
