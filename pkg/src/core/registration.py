# src/core/registration.py
"""
Descriptor matching and rigid pose estimation.

Transforms estimated here map cloud B into cloud A's frame: pa ~ R @ pb + t.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from src import constants as C
from src.core.geometry import PointCloud, RigidTransform
from src.exceptions import (
    AllSamplesDegenerate,
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyCloud,
    TooFewMatches,
)
from src.schemas.config_schemas import RansacConfig

logger = logging.getLogger(__name__)

MATCH_CHUNK = 1024


@dataclass(frozen=True)
class MatchSet:
    idx_a: np.ndarray
    idx_b: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return self.idx_a.shape[0]

    def as_array(self) -> np.ndarray:
        return np.stack([self.idx_a, self.idx_b], axis=1)


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    inliers: np.ndarray       # indices into the MatchSet
    iterations: int
    inlier_ratio: float
    low_confidence: bool = False


# -------------------------
# Matching
# -------------------------

def mutual_nearest_neighbors(fa: np.ndarray, fb: np.ndarray, chunk: int = MATCH_CHUNK) -> MatchSet:
    """(i, j) kept iff j is i's nearest neighbour in fb and i is j's in fa; ties go to the lower index."""
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise DimensionMismatch(f"descriptor widths differ: {fa.shape} vs {fb.shape}")
    if len(fa) == 0 or len(fb) == 0:
        raise EmptyCloud("cannot match an empty descriptor set")

    nn_ab = np.empty(len(fa), dtype=np.int64)
    d_ab = np.empty(len(fa))
    col_best = np.full(len(fb), np.inf)
    nn_ba = np.zeros(len(fb), dtype=np.int64)

    for start in range(0, len(fa), chunk):
        block = fa[start:start + chunk]
        diff = block[:, None, :] - fb[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))

        rows = np.argmin(dist, axis=1)
        nn_ab[start:start + len(block)] = rows
        d_ab[start:start + len(block)] = dist[np.arange(len(block)), rows]

        col_rows = np.argmin(dist, axis=0)
        col_vals = dist[col_rows, np.arange(len(fb))]
        better = col_vals < col_best
        col_best[better] = col_vals[better]
        nn_ba[better] = col_rows[better] + start

    ids = np.arange(len(fa))
    mutual = nn_ba[nn_ab] == ids
    return MatchSet(idx_a=ids[mutual], idx_b=nn_ab[mutual], distance=d_ab[mutual])


# -------------------------
# Closed-form alignment
# -------------------------

def _is_collinear(centred: np.ndarray) -> bool:
    s = np.linalg.svd(centred, compute_uv=False)
    return s[0] == 0.0 or s[1] <= C.COLLINEAR_TOL * s[0]


def kabsch(pa: np.ndarray, pb: np.ndarray) -> RigidTransform:
    """Least-squares (R, t) minimising sum ||pa_i - (R pb_i + t)||^2 with det R = +1."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    if pa.shape != pb.shape or pa.ndim != 2 or pa.shape[1] != 3:
        raise DimensionMismatch(f"paired point sets must both be (k, 3), got {pa.shape} and {pb.shape}")
    if len(pa) < 3:
        raise TooFewMatches(f"kabsch needs at least 3 pairs, got {len(pa)}")

    ca, cb = pa.mean(axis=0), pb.mean(axis=0)
    qa, qb = pa - ca, pb - cb
    if _is_collinear(qa) or _is_collinear(qb):
        raise DegenerateConfiguration("paired points are collinear")

    H = qb.T @ qa
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, ca - R @ cb)


def residuals(T: RigidTransform, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    return np.linalg.norm(pa - T.apply(pb), axis=1)


# -------------------------
# RANSAC
# -------------------------

def required_iterations(inlier_ratio: float, confidence: float, sample_size: int = C.RANSAC_SAMPLE_SIZE) -> float:
    p = inlier_ratio ** sample_size
    if p <= 0.0:
        return math.inf
    if p >= 1.0:
        return 0.0
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p))


def ransac_register(matches: MatchSet, A: PointCloud, B: PointCloud, cfg: RansacConfig) -> RegistrationResult:
    """
    Rows of A and B are addressed by the match indices. Degenerate samples are
    redrawn without using up an iteration, up to a total draw cap.
    """
    m = len(matches)
    if m < cfg.sample_size:
        raise TooFewMatches(f"RANSAC needs at least {cfg.sample_size} matches, got {m}")
    pa = A.points[matches.idx_a]
    pb = B.points[matches.idx_b]
    rng = np.random.default_rng(cfg.seed)
    thr = cfg.inlier_threshold

    best_T = None
    best_count = -1
    needed = cfg.max_iterations
    cap = C.RANSAC_DEGENERATE_BUDGET_FACTOR * cfg.max_iterations
    iterations = draws = 0
    while iterations < needed and draws < cap:
        draws += 1
        sample = rng.choice(m, size=cfg.sample_size, replace=False)
        try:
            T = kabsch(pa[sample], pb[sample])
        except DegenerateConfiguration:
            continue
        iterations += 1
        count = int(np.count_nonzero(residuals(T, pa, pb) <= thr))
        if count > best_count:
            best_T, best_count = T, count
            needed = min(cfg.max_iterations, required_iterations(count / m, cfg.confidence, cfg.sample_size))

    if best_T is None:
        raise AllSamplesDegenerate(f"all {draws} minimal samples were degenerate")

    inliers = np.flatnonzero(residuals(best_T, pa, pb) <= thr)
    if len(inliers) >= cfg.sample_size:
        try:
            refit = kabsch(pa[inliers], pb[inliers])
            refit_inliers = np.flatnonzero(residuals(refit, pa, pb) <= thr)
            if len(refit_inliers) >= len(inliers):
                best_T, inliers = refit, refit_inliers
        except DegenerateConfiguration:
            pass

    ratio = len(inliers) / m
    low = ratio < cfg.sample_size / m + cfg.inlier_ratio_floor
    logger.info(f"RANSAC: {iterations} iterations ({draws} draws), {len(inliers)}/{m} inliers"
                f"{', low confidence' if low else ''}")
    return RegistrationResult(transform=best_T, inliers=inliers, iterations=iterations,
                              inlier_ratio=ratio, low_confidence=low)
