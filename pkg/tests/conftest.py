import dataclasses

import numpy as np
import pytest

from distilvad.models import ModelConfig
from distilvad.synthvid import SceneConfig, generate_dataset
from distilvad.teachers import TeacherSpec, build_teacher
from distilvad.tensor import set_default_dtype
from distilvad.training import TrainConfig


@pytest.fixture(autouse=True)
def double_precision():
    """Gradient checks and bit-level comparisons run in float64."""
    previous = set_default_dtype("float64")
    yield
    set_default_dtype(previous)


@pytest.fixture(autouse=True)
def quiet_environment(monkeypatch):
    monkeypatch.setenv("DISTILVAD_PROGRESS", "false")
    monkeypatch.setenv("DISTILVAD_WORKERS", "2")


TINY_MODEL = dict(
    blocks=1,
    attn_heads=2,
    head_dim=4,
    channels=8,
    head_resolutions=[(1, 1), (2, 2), (4, 4)],
    input_resolution=(38, 38),
    downsample_filters=[2, 4, 4, 4, 8],
    head_filters=4,
)

TINY_SCENE = dict(
    resolution=(38, 38),
    clip_length=16,
    train_clips=2,
    distill_clips=2,
    test_clips=3,
    anomaly_rate=0.375,
)


@pytest.fixture
def make_model_cfg():
    """Factory for a tiny student (38x38 input, 2x2 token grid)."""
    def make(**overrides):
        return ModelConfig(**{**TINY_MODEL, **overrides})
    return make


@pytest.fixture
def tiny_cfg(make_model_cfg):
    return make_model_cfg()


@pytest.fixture
def make_scene_cfg():
    def make(**overrides):
        return SceneConfig(**{**TINY_SCENE, **overrides})
    return make


@pytest.fixture
def make_train_cfg():
    def make(**overrides):
        base = dict(epochs=1, pretrain_epochs=1, batch_size=4, lr=1e-3, stride=2,
                    max_batches_per_epoch=2)
        return dataclasses.replace(TrainConfig(), **{**base, **overrides})
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sequences(cfg, batch, seed=0):
    """Random float inputs shaped like the model's sequences."""
    r = np.random.default_rng(seed)
    return r.random((batch, cfg.in_channels, *cfg.input_resolution))


@pytest.fixture
def make_inputs():
    return random_sequences


@pytest.fixture(scope="session")
def tiny_dataset():
    """Two train, two distill and three test clips of 16 frames at 38x38."""
    return generate_dataset(SceneConfig(**TINY_SCENE), workers=2)


@pytest.fixture
def oracle_teachers():
    return [build_teacher(TeacherSpec(seed=1), 0), build_teacher(TeacherSpec(seed=2), 1)]
