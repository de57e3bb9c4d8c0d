# src/core/lrf.py
"""
Patch extraction, sampling with padding, local reference frames and
canonicalisation.

Pipeline for one centre:
    extract_patch -> sample_points(m) -> compute_lrf -> canonicalise(n)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src import constants as C
from src.core.geometry import PointCloud
from src.core.spatial_index import radius_neighbors
from src.exceptions import (
    DegenerateEigen,
    DegenerateLrf,
    EmptyPatch,
    NonPositiveRadius,
    PatchTooSmall,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Patch:
    centre: np.ndarray
    radius: float
    points: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]

    def offsets(self) -> np.ndarray:
        return self.points - self.centre


@dataclass(frozen=True)
class LrfFrame:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    degenerate: bool = False

    @property
    def rotation(self) -> np.ndarray:
        return np.stack([self.u, self.v, self.w])

    @classmethod
    def identity(cls, degenerate: bool = True) -> "LrfFrame":
        eye = np.eye(3)
        return cls(eye[0], eye[1], eye[2], degenerate)


@dataclass(frozen=True)
class CanonicalPatch:
    points: np.ndarray
    centre: np.ndarray
    radius: float
    degenerate: bool = False

    def __len__(self) -> int:
        return self.points.shape[0]


# -------------------------
# Extraction and sampling
# -------------------------

def extract_patch(cloud: PointCloud, centre: np.ndarray, r: float) -> Patch:
    if r <= 0:
        raise NonPositiveRadius(f"patch radius must be positive, got {r}")
    centre = np.asarray(centre, dtype=np.float64).reshape(3)
    ids = radius_neighbors(cloud, centre, r)
    if ids.size == 0:
        raise EmptyPatch(f"no points within {r} of {centre.tolist()}")
    return Patch(centre=centre, radius=float(r), points=cloud.points[ids])


def sample_points(p: Patch, k: int, rng: np.random.Generator, for_lrf: bool = False) -> Patch:
    """
    Exactly k points drawn from p: without replacement when |p| >= k, otherwise
    all points followed by a with-replacement padding of the deficit.
    """
    size = len(p)
    if size == 0:
        raise EmptyPatch("cannot sample from an empty patch")
    if for_lrf and size < 3:
        raise PatchTooSmall(f"LRF needs at least 3 points, patch has {size}")
    if size >= k:
        idx = rng.choice(size, size=k, replace=False)
    else:
        idx = np.concatenate([rng.permutation(size), rng.choice(size, size=k - size, replace=True)])
    return Patch(centre=p.centre, radius=p.radius, points=p.points[idx])


# -------------------------
# Covariance and eigen analysis
# -------------------------

def compute_covariance(p: Patch) -> np.ndarray:
    d = p.offsets()
    cov = d.T @ d / len(p)
    return 0.5 * (cov + cov.T)


def jacobi_eigh(S: np.ndarray,
                tol: float = C.JACOBI_TOL,
                max_sweeps: int = C.JACOBI_MAX_SWEEPS) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi for a symmetric 3x3 matrix; eigenvalues ascending, vectors in columns."""
    A = np.array(S, dtype=np.float64)
    V = np.eye(3)
    scale = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.sqrt(A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2)
        if off <= tol * scale or off == 0.0:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[p, q]
            if apq == 0.0:
                continue
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            sign = 1.0 if theta >= 0 else -1.0
            t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.eye(3)
            J[p, p] = c
            J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            V = V @ J
    eigvals = np.diag(A).copy()
    order = np.argsort(eigvals, kind="stable")
    return eigvals[order], V[:, order]


def smallest_eigenvector(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if np.max(np.abs(S - S.T)) > 1e-9:
        raise ValueError("covariance matrix must be symmetric")
    eigvals, eigvecs = jacobi_eigh(S)
    trace = float(np.trace(S))
    if eigvals[1] - eigvals[0] < C.EIGEN_GAP_TOL * trace:
        raise DegenerateEigen(
            f"two smallest eigenvalues {eigvals[0]:.3e}, {eigvals[1]:.3e} are too close"
        )
    e = eigvecs[:, 0]
    return e / np.linalg.norm(e)


# -------------------------
# Frame axes
# -------------------------

def disambiguate_normal(e: np.ndarray, p: Patch) -> np.ndarray:
    total = float(np.sum((p.centre - p.points) @ e))
    return e if total >= 0.0 else -e


def compute_tangent_axis(p: Patch, w: np.ndarray, r: float) -> np.ndarray:
    # metric offsets; the vanishing threshold applies to the sum in metres
    d = p.offsets()
    height = d @ w
    alpha = (r - np.linalg.norm(d, axis=1)) ** 2
    beta = height ** 2
    nu = d - height[:, None] * w[None, :]
    total = (alpha * beta) @ nu
    norm = float(np.linalg.norm(total))
    if norm < C.TANGENT_SUM_TOL:
        raise DegenerateLrf(f"weighted tangent sum vanished (|sum| = {norm:.3e})")
    u = total / norm
    u = u - (u @ w) * w
    return u / np.linalg.norm(u)


def compute_lrf(p: Patch) -> LrfFrame:
    if len(p) < 3:
        raise PatchTooSmall(f"LRF needs at least 3 points, patch has {len(p)}")
    e = smallest_eigenvector(compute_covariance(p))
    w = disambiguate_normal(e, p)
    u = compute_tangent_axis(p, w, p.radius)
    v = np.cross(w, u)
    return LrfFrame(u=u, v=v, w=w)


def canonicalise(p: Patch, f: LrfFrame, n: int, rng: np.random.Generator) -> CanonicalPatch:
    sampled = sample_points(p, n, rng)
    y = (sampled.points - p.centre) / p.radius @ f.rotation.T
    return CanonicalPatch(points=y, centre=p.centre, radius=p.radius, degenerate=f.degenerate)


# -------------------------
# Full per-centre preparation
# -------------------------

def prepare_patch(
    cloud: PointCloud,
    centre: np.ndarray,
    r: float,
    m: int,
    n: int,
    rng: np.random.Generator,
    use_lrf: bool = True,
    retries: int = 0,
) -> CanonicalPatch:
    """
    Extract, sample m, estimate the frame and canonicalise n points.

    With retries > 0 a degenerate frame triggers a fresh m-sample; once the
    retries are exhausted the last error propagates. With retries == 0 the
    identity frame is substituted and the patch is flagged degenerate.
    """
    patch = extract_patch(cloud, centre, r)
    sub = sample_points(patch, m, rng, for_lrf=use_lrf)
    if not use_lrf:
        return canonicalise(sub, LrfFrame.identity(degenerate=False), n, rng)

    attempt = 0
    while True:
        try:
            frame = compute_lrf(sub)
            break
        except (DegenerateEigen, DegenerateLrf) as exc:
            if attempt >= retries:
                if retries > 0:
                    raise
                logger.debug(f"Degenerate frame at {centre.tolist()}: {exc}; using identity")
                frame = LrfFrame.identity()
                break
            attempt += 1
            sub = sample_points(patch, m, rng, for_lrf=True)
    return canonicalise(sub, frame, n, rng)

