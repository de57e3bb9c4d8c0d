# src/core/service.py

import logging
import os
from functools import lru_cache
from typing import Optional

import numpy as np
from dotenv import load_dotenv

from src.api.docs.request import CloudPayload, DescribeRequest, MetricsRequest, RegisterRequest
from src.api.docs.response import DescribeResponse, MetricsResponse, RegisterResponse
from src.core.evaluation import rre, rte, success_rate
from src.core.geometry import PointCloud, RigidTransform
from src.core.pipeline import RegistrationPipeline
from src.helpers.descriptor_io import DescriptorSet
from src.exceptions import ConfigError, DimensionMismatch
from src import constants as C

load_dotenv()

logger = logging.getLogger(__name__)

GEDI_CONFIG_PATH = os.getenv("GEDI_CONFIG_PATH")
GEDI_CHECKPOINT = os.getenv("GEDI_CHECKPOINT")


# Loaded once, on first use
@lru_cache(maxsize=1)
def get_pipeline() -> RegistrationPipeline:
    pipeline = RegistrationPipeline.from_files(GEDI_CONFIG_PATH, GEDI_CHECKPOINT or None)
    logger.info(f"Pipeline ready (checkpoint: {GEDI_CHECKPOINT or 'none'})")
    return pipeline


def checkpoint_path() -> Optional[str]:
    return GEDI_CHECKPOINT or None


def _descriptor_set(payload: CloudPayload, side: str) -> DescriptorSet:
    if payload.descriptors is None:
        raise ConfigError(f"{side}: descriptors are required for registration")
    desc = np.asarray(payload.descriptors, dtype=np.float32)
    keypoints = None if payload.keypoints is None else np.asarray(payload.keypoints, dtype=np.int64)
    if keypoints is not None and len(keypoints) != len(desc):
        raise DimensionMismatch(f"{side}: {len(keypoints)} keypoints for {len(desc)} descriptors")
    return DescriptorSet(descriptors=desc, keypoints=keypoints)


def register_clouds(req: RegisterRequest) -> RegisterResponse:
    """
    High-level function used by the API:
    - mutual nearest-neighbour matching of the supplied descriptors
    - RANSAC pose of source into target
    """
    pipeline = get_pipeline()
    if req.ransac is not None:
        pipeline = RegistrationPipeline(pipeline.config.model_copy(update={"ransac": req.ransac}), pipeline.model)

    target = PointCloud(np.asarray(req.target.points, dtype=np.float64))
    source = PointCloud(np.asarray(req.source.points, dtype=np.float64))
    matches, result = pipeline.register(
        target, source, _descriptor_set(req.target, "target"), _descriptor_set(req.source, "source"),
    )
    return RegisterResponse(
        transform=result.transform.as_matrix().tolist(),
        num_matches=len(matches),
        inliers=result.inliers.tolist(),
        iterations=result.iterations,
        inlier_ratio=result.inlier_ratio,
        low_confidence=result.low_confidence,
    )


def describe_points(req: DescribeRequest) -> DescribeResponse:
    pipeline = get_pipeline()
    cloud = PointCloud(np.asarray(req.points, dtype=np.float64))
    ds = pipeline.describe(cloud, num_keypoints=req.num_keypoints, seed=req.seed)
    return DescribeResponse(
        keypoints=ds.keypoints.tolist(),
        descriptors=ds.descriptors.astype(np.float64).tolist(),
        degenerate=ds.degenerate.tolist(),
    )


def pose_metrics(req: MetricsRequest) -> MetricsResponse:
    T_g = RigidTransform.from_matrix(np.asarray(req.ground_truth)).validate(C.POSE_FILE_ORTHONORMAL_TOL)
    T_e = RigidTransform.from_matrix(np.asarray(req.estimate)).validate(C.POSE_FILE_ORTHONORMAL_TOL)
    rot = rre(T_g.rotation, T_e.rotation)
    translation = rte(T_g, T_e)
    return MetricsResponse(
        rte=translation,
        rre=rot.degrees,
        gimbal_lock=rot.gimbal_lock,
        success=success_rate([(translation, rot.degrees)]).rate == 1.0,
    )
