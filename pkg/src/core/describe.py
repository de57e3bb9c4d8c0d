# src/core/describe.py
"""Inference: sampled keypoints of a cloud -> unit descriptors."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple

import numpy as np

from src.core.encoder import EncoderModel, encode_batch
from src.core.geometry import PointCloud
from src.core.lrf import CanonicalPatch, prepare_patch
from src.core.spatial_index import build_spatial_index
from src.exceptions import EmptyCloud, PatchTooSmall
from src.helpers.descriptor_io import DescriptorSet
from src.helpers.utils import worker_count
from src.schemas.config_schemas import SamplingConfig

logger = logging.getLogger(__name__)

DESCRIBE_STREAM = 2_000_001
ENCODE_CHUNK = 256


def sample_keypoints(cloud: PointCloud, count: int, seed: int) -> np.ndarray:
    """`count` distinct point ids drawn uniformly, ascending; every id when count >= |cloud|."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot sample keypoints from an empty cloud")
    if count >= len(cloud):
        return np.arange(len(cloud), dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(len(cloud), size=count, replace=False)).astype(np.int64)


def _inference_patch(cloud: PointCloud, point_id: int, sampling: SamplingConfig, seed: int) -> Tuple[CanonicalPatch, bool]:
    rng = np.random.default_rng([seed, DESCRIBE_STREAM, point_id])
    centre = cloud.points[point_id]
    try:
        cp = prepare_patch(cloud, centre, sampling.radius, sampling.m, sampling.n_test, rng,
                           use_lrf=sampling.use_lrf, retries=0)
    except PatchTooSmall:
        cp = prepare_patch(cloud, centre, sampling.radius, sampling.m, sampling.n_test, rng, use_lrf=False)
        return cp, True
    return cp, cp.degenerate


def describe_cloud(
    model: EncoderModel,
    cloud: PointCloud,
    sampling: SamplingConfig,
    keypoints: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
) -> DescriptorSet:
    """
    Descriptors for `keypoints` (default: sampling.num_keypoints random ids).

    Patches whose frame is degenerate are described in the identity frame
    and flagged in the returned set.
    """
    seed = sampling.seed if seed is None else seed
    if keypoints is None:
        keypoints = sample_keypoints(cloud, sampling.num_keypoints, seed)
    keypoints = np.asarray(keypoints, dtype=np.int64)
    indexed = cloud if cloud.index is not None else build_spatial_index(cloud, sampling.radius)

    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        prepared = list(executor.map(lambda k: _inference_patch(indexed, int(k), sampling, seed), keypoints))

    degenerate = np.array([flag for _, flag in prepared], dtype=bool)
    if degenerate.any():
        logger.warning(f"{int(degenerate.sum())} of {len(keypoints)} patches had a degenerate frame; "
                       f"identity frame used")

    patches = np.stack([cp.points for cp, _ in prepared]) if prepared else np.empty((0, sampling.n_test, 3))
    if len(patches):
        desc = encode_batch(model, patches, chunk_size=ENCODE_CHUNK)
    else:
        desc = np.empty((0, model.descriptor_dim), dtype=np.float32)
    logger.info(f"Described {len(keypoints)} keypoints (d={model.descriptor_dim})")
    return DescriptorSet(descriptors=desc.astype(np.float32), keypoints=keypoints, degenerate=degenerate)
