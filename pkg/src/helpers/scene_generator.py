# src/helpers/scene_generator.py
"""
Synthetic scenes of primitive surfaces with exact ground truth.

A scene is a ground plane (plus optional walls) carrying boxes, cylinders
and spheres, sampled uniformly by area. Two half-space crops of the scene
become clouds A and B; B is moved by the inverse of a random rigid
transform T, so T maps B back into A's frame. Sensor noise is drawn
independently for each crop.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation as ScipyR

from src import constants as C
from src.core.geometry import PointCloud, RigidTransform, invert
from src.core.training import TrainingPair, find_correspondences
from src.exceptions import NoOverlap, OverlapUnreachable
from src.helpers.cloud_io import save_cloud
from src.helpers.config_loader import save_manifest
from src.helpers.pose_io import save_pose
from src.helpers.utils import worker_count
from src.schemas.config_schemas import SceneSpec
from src.schemas.dataset_schemas import DatasetManifest, PairEntry

logger = logging.getLogger(__name__)

# a surface is (area, sampler(n, rng) -> (n, 3) points)
Surface = Tuple[float, object]


# -------------------------
# Primitive surfaces
# -------------------------

def _rectangle(origin, e1, e2) -> Surface:
    origin, e1, e2 = (np.asarray(v, dtype=np.float64) for v in (origin, e1, e2))

    def sample(n, rng):
        uv = rng.random((n, 2))
        return origin + uv[:, :1] * e1 + uv[:, 1:] * e2

    return float(np.linalg.norm(np.cross(e1, e2))), sample


def _box(centre, size, yaw_deg) -> List[Surface]:
    R = ScipyR.from_euler("xyz", [0.0, 0.0, yaw_deg], degrees=True).as_matrix()
    sx, sy, sz = size
    ex, ey, ez = R[:, 0] * sx, R[:, 1] * sy, R[:, 2] * sz
    base = np.asarray(centre) - 0.5 * ex - 0.5 * ey
    # open bottom: the box rests on the ground
    return [
        _rectangle(base + ez, ex, ey),
        _rectangle(base, ex, ez),
        _rectangle(base + ey, ex, ez),
        _rectangle(base, ey, ez),
        _rectangle(base + ex, ey, ez),
    ]


def _cylinder(centre, radius, height) -> List[Surface]:
    centre = np.asarray(centre, dtype=np.float64)

    def side(n, rng):
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        z = rng.uniform(0.0, height, n)
        return centre + np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)

    def cap(n, rng):
        rho = radius * np.sqrt(rng.random(n))
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        return centre + np.stack([rho * np.cos(theta), rho * np.sin(theta), np.full(n, height)], axis=1)

    return [(2.0 * np.pi * radius * height, side), (np.pi * radius * radius, cap)]


def _sphere(centre, radius) -> List[Surface]:
    centre = np.asarray(centre, dtype=np.float64)

    def sample(n, rng):
        d = rng.normal(size=(n, 3))
        return centre + radius * d / np.linalg.norm(d, axis=1, keepdims=True)

    return [(4.0 * np.pi * radius * radius, sample)]


def _scene_surfaces(spec: SceneSpec, rng: np.random.Generator) -> Tuple[List[Surface], int]:
    L = spec.extent
    walls = [
        ([0, 0, 0], [L, 0, 0], [0, L, 0]),        # ground
        ([0, 0, 0], [0, L, 0], [0, 0, L / 2]),    # wall x = 0
        ([0, 0, 0], [L, 0, 0], [0, 0, L / 2]),    # wall y = 0
        ([L, 0, 0], [0, L, 0], [0, 0, L / 2]),    # wall x = L
    ]
    surfaces: List[Surface] = [_rectangle(*w) for w in walls[:spec.planes]]
    primitives = spec.planes

    def spot():
        return np.array([*rng.uniform(0.15 * L, 0.85 * L, 2), 0.0])

    for _ in range(spec.boxes):
        size = rng.uniform(0.08, 0.25, 3) * L
        surfaces += _box(spot(), size, rng.uniform(0.0, 90.0))
        primitives += 1
    for _ in range(spec.cylinders):
        surfaces += _cylinder(spot(), rng.uniform(0.03, 0.1) * L, rng.uniform(0.1, 0.3) * L)
        primitives += 1
    for _ in range(spec.spheres):
        r = rng.uniform(0.04, 0.1) * L
        surfaces += _sphere(spot() + [0.0, 0.0, r], r)
        primitives += 1
    return surfaces, primitives


def sample_scene(spec: SceneSpec, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """Points sampled uniformly by area over the whole scene, and their spacing sqrt(area / N)."""
    surfaces, primitives = _scene_surfaces(spec, rng)
    if not surfaces:
        raise ValueError("scene has no surfaces")
    areas = np.array([a for a, _ in surfaces])
    total = spec.points_per_surface * primitives
    counts = rng.multinomial(total, areas / areas.sum())
    points = np.concatenate([sampler(int(k), rng) for (_, sampler), k in zip(surfaces, counts)])
    return points, float(np.sqrt(areas.sum() / total))


# -------------------------
# Pairs
# -------------------------

def _random_transform(spec: SceneSpec, rng: np.random.Generator) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0.0, spec.max_rotation_deg))
    R = ScipyR.from_rotvec(axis * angle).as_matrix()
    t = rng.uniform(-spec.max_translation, spec.max_translation, 3)
    return RigidTransform(R, t)


def _half_space_crops(points: np.ndarray, keep: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Ids of the lowest and the highest `keep` fraction along a random horizontal direction."""
    theta = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta), 0.0])
    order = np.argsort(points @ direction, kind="stable")
    k = int(round(keep * len(points)))
    return np.sort(order[:k]), np.sort(order[len(points) - k:])


def generate_synthetic_pair(spec: SceneSpec, name: str = "") -> TrainingPair:
    rng = np.random.default_rng(spec.seed)
    scene, spacing = sample_scene(spec, rng)
    T = _random_transform(spec, rng)
    T_inv = invert(T)
    tol = 2.0 * spacing

    target = spec.overlap_target
    effective = target
    for attempt in range(C.OVERLAP_ATTEMPTS):
        # two crops of fraction a share 2a - 1 of the scene, so overlap = (2a - 1) / a
        keep = 1.0 / (2.0 - effective)
        ids_a, ids_b = _half_space_crops(scene, keep, rng)
        pts_a = scene[ids_a] + rng.normal(0.0, spec.noise_sigma, (len(ids_a), 3))
        pts_b = scene[ids_b] + rng.normal(0.0, spec.noise_sigma, (len(ids_b), 3))
        pts_b = T_inv.apply(pts_b[rng.permutation(len(pts_b))])

        pair = TrainingPair(PointCloud(pts_a), PointCloud(pts_b), T, name=name, spacing=spacing)
        try:
            measured = find_correspondences(pair, tol).overlap
        except NoOverlap:
            measured = 0.0
        logger.debug(f"{name or 'pair'} attempt {attempt}: keep {keep:.3f}, overlap {measured:.3f}")
        if abs(measured - target) <= C.OVERLAP_TOLERANCE:
            return TrainingPair(pair.cloud_a, pair.cloud_b, T, overlap=measured, name=name, spacing=spacing)
        effective = float(np.clip(effective - (measured - target), 1e-3, 1.0))

    raise OverlapUnreachable(
        f"overlap {target:.2f} not reached within {C.OVERLAP_ATTEMPTS} crop attempts (seed {spec.seed})"
    )


def pair_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def generate_dataset(spec: SceneSpec, out_dir: Path | str, count: int, prefix: str = "pair") -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def build(i: int) -> PairEntry:
        name = f"{prefix}_{i:04d}"
        pair = generate_synthetic_pair(spec.model_copy(update={"seed": pair_seed(spec.seed, i)}), name=name)
        save_cloud(pair.cloud_a, out / f"{name}_a.ply")
        save_cloud(pair.cloud_b, out / f"{name}_b.ply")
        save_pose(pair.transform, out / f"{name}_pose.txt")
        return PairEntry(
            name=name, cloud_a=f"{name}_a.ply", cloud_b=f"{name}_b.ply", pose=f"{name}_pose.txt",
            overlap=round(pair.overlap, 6), spacing=pair.spacing,
        )

    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        entries = list(executor.map(build, range(count)))

    manifest = DatasetManifest(pairs=entries, seed=spec.seed)
    save_manifest(manifest, out / "manifest.yaml")
    logger.info(f"Generated {count} synthetic pairs in {out}")
    return manifest
