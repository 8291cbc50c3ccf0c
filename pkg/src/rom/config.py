"""Configuration objects for the model, scene generator, and training loop."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ModelConfig:
    """Widths of all networks. Defaults mirror the full-size architecture."""

    d_viz: int = 512
    num_classes: int = 10
    loc_layers: tuple = (32, 64, 128)       # hidden..., output = location feature width
    branch_layers: tuple = (512, 256, 128, 128)  # view-dep / view-indep branches
    pos_hidden: int = 256
    cls_hidden: int = 256
    dist_hidden: int = 256
    agnn_stages: tuple = ("self", "cross", "self", "cross")
    agnn_hidden: int = 256
    sinkhorn_iters: int = 10

    @property
    def d_loc(self) -> int:
        return self.loc_layers[-1]

    @property
    def d_branch(self) -> int:
        return self.branch_layers[-1]

    @property
    def d_obj(self) -> int:
        return 2 * self.d_branch

    @property
    def d_agnn(self) -> int:
        # AGNN keeps the object-feature width end to end
        return self.d_obj

    @classmethod
    def tiny(cls, num_classes: int = 4) -> "ModelConfig":
        """Small widths for gradient checks and fast unit tests."""
        return cls(
            d_viz=8,
            num_classes=num_classes,
            loc_layers=(8, 8),
            branch_layers=(8, 8),
            pos_hidden=8,
            cls_hidden=8,
            dist_hidden=8,
            agnn_hidden=8,
        )

    @classmethod
    def desk(cls, num_classes: int = 10) -> "ModelConfig":
        """Desk-scale widths: architecture ratios preserved, runtime minutes."""
        return cls(
            d_viz=32,
            num_classes=num_classes,
            loc_layers=(16, 32, 64),
            branch_layers=(128, 64, 64),
            pos_hidden=64,
            cls_hidden=64,
            dist_hidden=64,
            agnn_hidden=128,
        )


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene and camera sampling parameters."""

    room_size: tuple = (10.0, 10.0, 3.0)      # meters
    n_objects_min: int = 6
    n_objects_max: int = 12
    num_classes: int = 10
    d_viz: int = 32
    min_center_dist: float = 0.9              # meters between object centers
    half_extent_min: float = 0.25
    half_extent_max: float = 0.6
    image_width: int = 1024
    image_height: int = 768
    focal_px: float = 800.0
    min_box_px: float = 25.0
    occlusion_overlap: float = 0.7
    class_emb_seed: int = 1234
    class_emb_scale: float = 0.4
    feature_noise: dict = field(
        default_factory=lambda: {"easy": 1.8, "hard": 2.7, "very_hard": 3.6}
    )
    keypoint_density: float = 5.0
    keypoint_outlier_rate: float = 0.05
    max_placement_tries: int = 200
    max_camera_tries: int = 60

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    lambda_aff: float = 1.0
    lambda_cls: float = 1.0
    lambda_pos: float = 0.1
    lambda_rel: float = 0.1
    feature_noise_std: float = 0.1            # sqrt of the 0.01 noise variance
    max_objects: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(f.default, tuple):
            kwargs[f.name] = tuple(kwargs[f.name])
    return cls(**kwargs)


def load_config(path, cls):
    with open(path) as fh:
        return _from_dict(cls, json.load(fh))


def model_config_from_dict(data: dict) -> ModelConfig:
    return _from_dict(ModelConfig, data)


def scene_config_from_dict(data: dict) -> SceneConfig:
    return _from_dict(SceneConfig, data)


def train_config_from_dict(data: dict) -> TrainConfig:
    return _from_dict(TrainConfig, data)
