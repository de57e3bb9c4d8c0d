# tests/conftest.py
import numpy as np
import pytest

from src.core.encoder import EncoderModel
from src.core.geometry import PointCloud, RigidTransform, euler_to_rotation, invert
from src.core.gradcheck import reduced_encoder_config
from src.core.training import TrainingPair
from src.schemas.config_schemas import (
    GediConfig,
    LossConfig,
    RansacConfig,
    SamplingConfig,
    TrainConfig,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def blob_points():
    """Anisotropic, skewed blob: distinct covariance eigenvalues and a usable tangent sum."""
    gen = np.random.default_rng(7)
    pts = gen.normal(size=(400, 3)) * np.array([0.30, 0.15, 0.04])
    pts[:, 2] += 0.8 * pts[:, 0] ** 2 + 0.3 * pts[:, 1]
    pts[:, 1] += 0.5 * np.abs(pts[:, 0])
    return pts


@pytest.fixture
def blob_cloud(blob_points):
    return PointCloud(blob_points)


@pytest.fixture
def rigid_transform():
    return RigidTransform(euler_to_rotation(0.3, -0.2, 1.1), np.array([0.5, -0.25, 0.1]))


@pytest.fixture
def tiny_model():
    return EncoderModel(reduced_encoder_config(seed=3))


@pytest.fixture
def tiny_config():
    return GediConfig(
        sampling=SamplingConfig(radius=0.5, m=128, n_train=64, n_test=64, num_keypoints=16, seed=0),
        encoder=reduced_encoder_config(seed=3),
        loss=LossConfig(anchors_per_pair=8, weighting="conventional"),
        train=TrainConfig(epochs=1, iterations_per_epoch=3, augmentation_deg=10.0,
                          min_overlap=0.3, checkpoint_every=2, seed=0),
        ransac=RansacConfig(max_iterations=500, inlier_threshold=0.05, seed=0),
    )


def make_pair(T: RigidTransform, n: int = 600, keep: float = 0.8, seed: int = 11) -> TrainingPair:
    """A is a random cube cloud; B is a subset of A expressed in B's own frame."""
    gen = np.random.default_rng(seed)
    pa = gen.uniform(-1.0, 1.0, size=(n, 3))
    ids = np.sort(gen.choice(n, size=int(keep * n), replace=False))
    pb = invert(T).apply(pa[ids])
    return TrainingPair(PointCloud(pa), PointCloud(pb), T, name="synthetic")


@pytest.fixture
def cube_pair(rigid_transform):
    return make_pair(rigid_transform)


@pytest.fixture
def pair_factory():
    return make_pair
