import numpy as np
import pytest

from rom.config import ModelConfig, SceneConfig, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    return ModelConfig.tiny()


@pytest.fixture
def tiny_scene_cfg():
    return SceneConfig(d_viz=8, num_classes=4)


@pytest.fixture
def train_cfg():
    return TrainConfig()
