# src/api/docs/response.py
from typing import List, Optional

from pydantic import BaseModel, Field

from src import constants as C


class RegisterResponse(BaseModel):
    transform: List[List[float]] = Field(..., description="4x4 pose mapping source into target")
    num_matches: int
    inliers: List[int] = Field(..., description="indices into the mutual matches")
    iterations: int
    inlier_ratio: float = Field(..., description="inliers / matches (0-1)")
    low_confidence: bool = Field(False, description="inlier ratio close to the random-match floor")


class DescribeResponse(BaseModel):
    keypoints: List[int]
    descriptors: List[List[float]]
    degenerate: List[bool] = Field(..., description="identity frame substituted for this keypoint")


class MetricsResponse(BaseModel):
    rte: float = Field(..., description="translation error, metres")
    rre: float = Field(..., description="sum of absolute Euler angle errors, degrees")
    euler_convention: str = C.EULER_CONVENTION
    gimbal_lock: bool = False
    success: bool


class HealthResponse(BaseModel):
    status: str = "ok"
    model_loaded: bool
    checkpoint: Optional[str] = None
