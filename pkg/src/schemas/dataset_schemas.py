# src/schemas/dataset_schemas.py
from typing import List, Optional

from pydantic import BaseModel, Field


class PairEntry(BaseModel):
    name: str
    cloud_a: str = Field(..., description="path relative to the manifest")
    cloud_b: str
    pose: str = Field(..., description="4x4 pose file mapping B into A's frame")
    overlap: Optional[float] = Field(None, ge=0.0, le=1.0)
    spacing: Optional[float] = Field(None, gt=0.0, description="sampling spacing of the scene, metres")


class DatasetManifest(BaseModel):
    pairs: List[PairEntry] = Field(default_factory=list)
    seed: Optional[int] = None
