# src/api/docs/request.py
from typing import List, Optional

from pydantic import BaseModel, Field

from src.schemas.config_schemas import RansacConfig

Point = List[float]
Matrix4 = List[List[float]]


class CloudPayload(BaseModel):
    """
    One point cloud with optional precomputed descriptors.

    keypoints:
      row i of `descriptors` describes points[keypoints[i]];
      omitted when descriptors cover every point in order.
    """
    points: List[Point] = Field(..., description="N x 3 coordinates, metres")
    descriptors: Optional[List[List[float]]] = Field(None, description="K x d unit descriptors")
    keypoints: Optional[List[int]] = Field(None, description="point index per descriptor row")


class RegisterRequest(BaseModel):
    source: CloudPayload = Field(..., description="cloud B, moved by the returned pose")
    target: CloudPayload = Field(..., description="cloud A, the reference frame")
    ransac: Optional[RansacConfig] = Field(None, description="overrides the service RANSAC settings")


class DescribeRequest(BaseModel):
    points: List[Point] = Field(..., description="N x 3 coordinates, metres")
    num_keypoints: int = Field(1000, gt=0, description="points sampled for description")
    seed: int = Field(0, description="keypoint and patch sampling seed")


class MetricsRequest(BaseModel):
    ground_truth: Matrix4 = Field(..., description="4x4 ground-truth pose")
    estimate: Matrix4 = Field(..., description="4x4 estimated pose")
