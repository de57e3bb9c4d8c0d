# src/schemas/report_schemas.py
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from src import constants as C


class PairRecord(BaseModel):
    name: str
    overlap: Optional[float] = None
    num_matches: int
    inlier_ratio: float
    empty_match_set: bool = False
    rte: Optional[float] = None
    rre: Optional[float] = None
    gimbal_lock: bool = False
    success: Optional[bool] = None
    ransac_inlier_ratio: Optional[float] = None
    low_confidence: bool = False
    rotated: bool = False


class FmrSummary(BaseModel):
    recall: float = Field(..., ge=0.0, le=1.0)
    mean_inlier_ratio: float
    std_inlier_ratio: float
    num_pairs: int


class SweepPoint(BaseModel):
    value: float
    recall: float


class RegistrationSummary(BaseModel):
    success_rate: float
    mean_rte: Optional[float] = None
    mean_rre: Optional[float] = None
    num_pairs: int


class EvalReport(BaseModel):
    euler_convention: str = C.EULER_CONVENTION
    config: Dict = Field(default_factory=dict, description="fmr and ransac settings used")
    pairs: List[PairRecord] = Field(default_factory=list)
    fmr: Optional[FmrSummary] = None
    registration: Optional[RegistrationSummary] = None
    tau1_sweep: List[SweepPoint] = Field(default_factory=list)
    tau2_sweep: List[SweepPoint] = Field(default_factory=list)
    skipped_pairs: List[str] = Field(default_factory=list)
