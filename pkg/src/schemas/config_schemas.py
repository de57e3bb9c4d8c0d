# src/schemas/config_schemas.py
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src import constants as C


class SceneSpec(BaseModel):
    seed: int = 0
    planes: int = 1
    boxes: int = 4
    cylinders: int = 2
    spheres: int = 2
    points_per_surface: int = Field(2000, gt=0)
    noise_sigma: float = Field(0.002, ge=0.0)
    overlap_target: float = Field(0.6, gt=0.0, le=1.0)
    crop_style: Literal["half_space"] = "half_space"
    extent: float = Field(3.0, gt=0.0, description="scene side length, metres")
    max_translation: float = Field(1.0, ge=0.0)
    max_rotation_deg: float = Field(180.0, ge=0.0, le=180.0)


class SamplingConfig(BaseModel):
    radius: float = Field(C.DEFAULT_PATCH_RADIUS, gt=0.0, description="patch radius r, metres")
    m: int = C.DEFAULT_M
    n_train: int = C.DEFAULT_N_TRAIN
    n_test: int = C.DEFAULT_N_TEST
    num_keypoints: int = Field(C.EVAL_POINTS, gt=0)
    use_lrf: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_counts(self) -> "SamplingConfig":
        for name in ("n_train", "n_test"):
            n = getattr(self, name)
            if not 3 <= n < self.m:
                raise ValueError(f"{name}={n} must satisfy 3 <= n < m={self.m}")
        return self


class SetAbstractionConfig(BaseModel):
    centroids: int = Field(..., gt=0)
    radius: float
    max_neighbours: int = Field(32, gt=0)
    mlp: List[int]

    @field_validator("radius")
    @classmethod
    def _radius_in_unit_ball(cls, v: float) -> float:
        if not 0.0 < v <= 2.0:
            raise ValueError("set abstraction radius must lie in (0, 2]")
        return v

    @field_validator("mlp")
    @classmethod
    def _non_empty(cls, v: List[int]) -> List[int]:
        if not v or any(w <= 0 for w in v):
            raise ValueError("mlp widths must be a non-empty list of positive ints")
        return v


class QNetConfig(BaseModel):
    enabled: bool = True
    point_mlp: List[int] = Field(default_factory=lambda: [64, 128, 256])
    head: List[int] = Field(default_factory=lambda: [128])


def _default_set_abstraction() -> List[SetAbstractionConfig]:
    return [
        SetAbstractionConfig(centroids=128, radius=0.2, max_neighbours=32, mlp=[64, 64, 128]),
        SetAbstractionConfig(centroids=32, radius=0.4, max_neighbours=32, mlp=[128, 128, 256]),
    ]


class EncoderConfig(BaseModel):
    qnet: QNetConfig = Field(default_factory=QNetConfig)
    set_abstraction: List[SetAbstractionConfig] = Field(default_factory=_default_set_abstraction)
    global_mlp: List[int] = Field(default_factory=lambda: [256, 512, C.BOTTLENECK_CHANNELS])
    head: List[int] = Field(default_factory=lambda: [512, 256])
    descriptor_dim: int = Field(C.DEFAULT_DESCRIPTOR_DIM, gt=0)
    dropout: float = C.DROPOUT
    init_seed: int = 0
    reduced_width: bool = Field(False, description="gradient-check encoder, exempt from the bottleneck width")

    @field_validator("dropout")
    @classmethod
    def _dropout_range(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("dropout must satisfy 0 <= p < 1")
        return v

    @field_validator("global_mlp")
    @classmethod
    def _non_empty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("global_mlp needs at least one layer")
        return v

    @model_validator(mode="after")
    def _check_hierarchy(self) -> "EncoderConfig":
        previous = None
        for sa in self.set_abstraction:
            if previous is not None and sa.centroids > previous:
                raise ValueError("set abstraction centroid counts must not increase")
            previous = sa.centroids
        if not self.reduced_width and self.global_mlp[-1] != C.BOTTLENECK_CHANNELS:
            raise ValueError(f"global_mlp must end in {C.BOTTLENECK_CHANNELS} channels, got {self.global_mlp[-1]}")
        return self


class OptimizerConfig(BaseModel):
    learning_rate: float = Field(C.LEARNING_RATE, gt=0.0)
    lr_decay: float = Field(C.LR_DECAY, gt=0.0, le=1.0)
    decay_every_epochs: int = Field(C.LR_DECAY_EVERY_EPOCHS, gt=0)
    weight_decay: float = Field(C.WEIGHT_DECAY, ge=0.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)


class LossConfig(BaseModel):
    positive_margin: float = C.POSITIVE_MARGIN
    negative_margin: float = C.NEGATIVE_MARGIN
    exclusion_radius: Optional[float] = Field(
        None, description="r_C in metres; defaults to exclusion_radius_factor * patch radius"
    )
    exclusion_radius_factor: float = Field(C.EXCLUSION_RADIUS_FACTOR, gt=0.0)
    anchors_per_pair: int = Field(C.DEFAULT_ANCHORS, gt=0)
    weighting: Literal["literal", "conventional"] = "literal"

    @model_validator(mode="after")
    def _check_margins(self) -> "LossConfig":
        if not 0.0 <= self.positive_margin < self.negative_margin:
            raise ValueError("margins must satisfy 0 <= m+ < m-")
        if self.exclusion_radius is not None and self.exclusion_radius <= 0:
            raise ValueError("exclusion_radius must be positive")
        return self

    def resolve_exclusion_radius(self, patch_radius: float) -> float:
        if self.exclusion_radius is not None:
            return self.exclusion_radius
        return self.exclusion_radius_factor * patch_radius


class TrainConfig(BaseModel):
    epochs: int = Field(10, gt=0)
    iterations_per_epoch: int = Field(16000, gt=0)
    augmentation_deg: float = Field(C.AUGMENTATION_DEG, ge=0.0)
    correspondence_tolerance: Optional[float] = Field(
        None, description="metres; defaults to 2x the dataset sampling spacing"
    )
    min_overlap: float = Field(C.MIN_OVERLAP, ge=0.0, le=1.0)
    checkpoint_every: int = Field(1000, gt=0)
    seed: int = 0


class RansacConfig(BaseModel):
    max_iterations: int = Field(C.RANSAC_MAX_ITERATIONS, gt=0)
    confidence: float = C.RANSAC_CONFIDENCE
    inlier_threshold: float = Field(C.RANSAC_THRESHOLD_INDOOR, gt=0.0)
    sample_size: Literal[3] = C.RANSAC_SAMPLE_SIZE
    inlier_ratio_floor: float = Field(0.02, ge=0.0)
    seed: int = 0

    @field_validator("confidence")
    @classmethod
    def _open_unit(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        return v


class FmrConfig(BaseModel):
    tau1: float = Field(C.TAU_1, gt=0.0)
    tau2: float = C.TAU_2
    min_overlap: float = Field(C.MIN_OVERLAP, ge=0.0, le=1.0)
    num_points: int = Field(C.EVAL_POINTS, gt=0)
    tau1_sweep: List[float] = Field(default_factory=list)
    tau2_sweep: List[float] = Field(default_factory=list)

    @field_validator("tau2")
    @classmethod
    def _ratio(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("tau2 must lie in (0, 1)")
        return v


class GediConfig(BaseModel):
    scene: SceneSpec = Field(default_factory=SceneSpec)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    fmr: FmrConfig = Field(default_factory=FmrConfig)
