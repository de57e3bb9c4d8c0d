# src/core/evaluation.py
"""
Registration and descriptor quality metrics.

All comparisons are strict: a match is an inlier when its aligned distance
is < tau1, a pair counts towards recall when its inlier ratio is > tau2,
and a registration succeeds when RTE < 2 m and RRE < 5 deg.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src import constants as C
from src.core.geometry import PointCloud, RigidTransform, rotation_to_euler
from src.core.registration import MatchSet
from src.exceptions import TooFewPoints

logger = logging.getLogger(__name__)


class InlierRatio(NamedTuple):
    value: float
    empty: bool = False


class FmrResult(NamedTuple):
    recall: float
    mean: float
    std: float


class RotationError(NamedTuple):
    degrees: float
    gimbal_lock: bool = False


@dataclass(frozen=True)
class SuccessSummary:
    rate: float
    mean_rte: Optional[float]
    mean_rre: Optional[float]
    successes: np.ndarray  # bool per result


@dataclass(frozen=True)
class DescriptorColors:
    colors: np.ndarray
    rank_deficient: bool = False


# -------------------------
# Feature-matching recall
# -------------------------

def aligned_distances(matches: MatchSet, A: PointCloud, B: PointCloud, T: RigidTransform) -> np.ndarray:
    return np.linalg.norm(A.points[matches.idx_a] - T.apply(B.points[matches.idx_b]), axis=1)


def inlier_ratio(matches: MatchSet, A: PointCloud, B: PointCloud, T: RigidTransform, tau1: float) -> InlierRatio:
    if len(matches) == 0:
        return InlierRatio(0.0, empty=True)
    d = aligned_distances(matches, A, B, T)
    return InlierRatio(float(np.count_nonzero(d < tau1) / len(d)))


def feature_matching_recall(ratios: Sequence[float], tau2: float) -> FmrResult:
    xi = np.asarray(ratios, dtype=np.float64)
    if xi.size == 0:
        raise ValueError("feature-matching recall needs at least one pair")
    # population standard deviation
    return FmrResult(float(np.mean(xi > tau2)), float(np.mean(xi)), float(np.std(xi)))


def recall_over_tau1(distances: Sequence[np.ndarray], tau1_values: Sequence[float], tau2: float) -> List[Tuple[float, float]]:
    """Recall for each tau1, given every pair's aligned match distances."""
    out = []
    for tau1 in tau1_values:
        ratios = [float(np.mean(d < tau1)) if len(d) else 0.0 for d in distances]
        out.append((float(tau1), feature_matching_recall(ratios, tau2).recall))
    return out


def recall_over_tau2(ratios: Sequence[float], tau2_values: Sequence[float]) -> List[Tuple[float, float]]:
    return [(float(t), feature_matching_recall(ratios, t).recall) for t in tau2_values]


# -------------------------
# Pose errors
# -------------------------

def rte(T_g: RigidTransform, T_e: RigidTransform) -> float:
    return float(np.linalg.norm(T_g.translation - T_e.translation))


def rre(R_g: np.ndarray, R_e: np.ndarray) -> RotationError:
    """Sum of absolute intrinsic X-Y-Z Euler angles of R_g^T R_e, in degrees."""
    angles = rotation_to_euler(np.asarray(R_g).T @ np.asarray(R_e))
    total = abs(angles.ax) + abs(angles.ay) + abs(angles.az)
    return RotationError(float(np.degrees(total)), angles.gimbal_lock)


def success_rate(
    errors: Sequence[Tuple[float, float]],
    rte_max: float = C.SUCCESS_RTE_MAX,
    rre_max: float = C.SUCCESS_RRE_MAX,
) -> SuccessSummary:
    """`errors` holds (RTE metres, RRE degrees) per pair; means cover successful pairs only."""
    arr = np.asarray(errors, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValueError("success rate needs at least one result")
    ok = (arr[:, 0] < rte_max) & (arr[:, 1] < rre_max)
    if not ok.any():
        return SuccessSummary(0.0, None, None, ok)
    return SuccessSummary(
        rate=float(ok.mean()),
        mean_rte=float(arr[ok, 0].mean()),
        mean_rre=float(arr[ok, 1].mean()),
        successes=ok,
    )


# -------------------------
# Descriptor colourings
# -------------------------

def pca_colors(descriptors: np.ndarray, rank_tol: float = 1e-9) -> DescriptorColors:
    """
    RGB from the top three principal components, each min-max scaled to [0, 1].

    The largest-magnitude loading of every component is made positive so the
    colouring is reproducible. Missing components are filled with 0.5.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise TooFewPoints(f"PCA colouring needs at least 3 descriptors, got {X.shape[0] if X.ndim else 0}")
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int(np.count_nonzero(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0

    colors = np.full((X.shape[0], 3), 0.5)
    for k in range(min(rank, 3)):
        v = Vt[k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        proj = Xc @ v
        lo, hi = proj.min(), proj.max()
        if hi > lo:
            colors[:, k] = (proj - lo) / (hi - lo)

    deficient = rank < 3
    if deficient:
        logger.warning(f"PCA colouring is rank deficient ({rank} non-zero components); padded with 0.5")
    return DescriptorColors(colors, rank_deficient=deficient)


def descriptor_distance_colors(descriptors: np.ndarray, query: int) -> DescriptorColors:
    """White for the farthest descriptor, red for the query and its closest matches."""
    X = np.asarray(descriptors, dtype=np.float64)
    if not 0 <= query < len(X):
        raise IndexError(f"query index {query} out of range for {len(X)} descriptors")
    d = np.linalg.norm(X - X[query], axis=1)
    far = d.max()
    t = 1.0 - d / far if far > 0 else np.ones(len(X))
    return DescriptorColors(np.stack([np.ones(len(X)), 1.0 - t, 1.0 - t], axis=1))
