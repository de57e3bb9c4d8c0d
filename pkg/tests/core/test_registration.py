# tests/core/test_registration.py
import math

import numpy as np
import pytest

from src.core.evaluation import rre, rte
from src.core.geometry import PointCloud, RigidTransform, compose, euler_to_rotation, random_rotation
from src.core.registration import (
    MatchSet,
    kabsch,
    mutual_nearest_neighbors,
    ransac_register,
    required_iterations,
    residuals,
)
from src.exceptions import AllSamplesDegenerate, DegenerateConfiguration, DimensionMismatch, EmptyCloud, TooFewMatches
from src.schemas.config_schemas import RansacConfig


def _unit(rng, n, d=16):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _double_argmin(fa, fb):
    d = np.linalg.norm(fa[:, None] - fb[None], axis=-1)
    return [(i, int(np.argmin(d[i]))) for i in range(len(fa)) if int(np.argmin(d[:, np.argmin(d[i])])) == i]


def test_identical_sets_match_identically(rng):
    f = _unit(rng, 20)
    matches = mutual_nearest_neighbors(f, f)
    np.testing.assert_array_equal(matches.idx_a, np.arange(20))
    np.testing.assert_array_equal(matches.idx_b, np.arange(20))


def test_single_descriptor_gives_at_most_one_match(rng):
    assert len(mutual_nearest_neighbors(_unit(rng, 1), _unit(rng, 9))) <= 1


@pytest.mark.parametrize("chunk", [3, 1024])
def test_matching_equals_double_argmin(rng, chunk):
    fa, fb = _unit(rng, 40), _unit(rng, 55)
    matches = mutual_nearest_neighbors(fa, fb, chunk=chunk)
    assert [tuple(p) for p in matches.as_array().tolist()] == _double_argmin(fa, fb)


def test_matching_errors(rng):
    with pytest.raises(DimensionMismatch):
        mutual_nearest_neighbors(_unit(rng, 3, 8), _unit(rng, 3, 4))
    with pytest.raises(EmptyCloud):
        mutual_nearest_neighbors(np.empty((0, 8)), _unit(rng, 3, 8))


def test_kabsch_identity(rng):
    pts = rng.normal(size=(10, 3))
    T = kabsch(pts, pts)
    np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(T.translation, 0.0, atol=1e-12)


def test_kabsch_recovers_known_motion(rng):
    T0 = RigidTransform(random_rotation(rng), rng.normal(size=3))
    pb = rng.normal(size=(25, 3))
    T = kabsch(T0.apply(pb), pb)
    np.testing.assert_allclose(T.rotation, T0.rotation, atol=1e-9)
    np.testing.assert_allclose(T.translation, T0.translation, atol=1e-9)


@pytest.mark.parametrize("scale", [1e-4, 1e-2, 0.5])
def test_kabsch_residual_is_minimal(rng, scale):
    T0 = RigidTransform(random_rotation(rng), rng.normal(size=3))
    pb = rng.normal(size=(40, 3))
    pa = T0.apply(pb) + rng.normal(scale=0.05, size=(40, 3))
    T = kabsch(pa, pb)
    best = float(np.sum(residuals(T, pa, pb) ** 2))
    for _ in range(200):
        nudge = RigidTransform(euler_to_rotation(*rng.normal(scale=scale, size=3)), rng.normal(scale=scale, size=3))
        assert np.sum(residuals(compose(nudge, T), pa, pb) ** 2) >= best - 1e-12


def test_kabsch_never_returns_a_reflection(rng):
    for _ in range(20):
        pb = rng.normal(size=(4, 3))
        pa = pb * np.array([1.0, 1.0, -1.0]) + rng.normal(scale=0.3, size=(4, 3))
        assert np.linalg.det(kabsch(pa, pb).rotation) == pytest.approx(1.0)


def test_kabsch_errors(rng):
    with pytest.raises(TooFewMatches):
        kabsch(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfiguration):
        kabsch(line, line)
    with pytest.raises(DimensionMismatch):
        kabsch(np.zeros((4, 3)), np.zeros((5, 3)))


def test_required_iterations():
    assert required_iterations(0.0, 0.99) == math.inf
    assert required_iterations(1.0, 0.99) == 0
    assert required_iterations(0.5, 0.99) == math.ceil(math.log(0.01) / math.log(1 - 0.125))


def _registration_case(rng, n, outlier_fraction):
    T0 = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, size=3))
    pb = rng.uniform(-2, 2, size=(n, 3))
    pa = T0.apply(pb)
    bad = rng.choice(n, size=int(outlier_fraction * n), replace=False)
    pa[bad] = rng.uniform(-3, 3, size=(len(bad), 3))
    ids = np.arange(n)
    matches = MatchSet(idx_a=ids, idx_b=ids, distance=np.zeros(n))
    return T0, matches, PointCloud(pa), PointCloud(pb)


def test_ransac_on_perfect_matches(rng):
    T0, matches, A, B = _registration_case(rng, 50, 0.0)
    result = ransac_register(matches, A, B, RansacConfig(seed=3))
    assert rte(T0, result.transform) < 1e-6
    assert rre(T0.rotation, result.transform.rotation).degrees < 1e-6
    assert result.inlier_ratio == 1.0
    assert not result.low_confidence


def test_ransac_with_half_outliers(rng):
    T0, matches, A, B = _registration_case(rng, 200, 0.5)
    result = ransac_register(matches, A, B, RansacConfig(seed=1, inlier_threshold=0.05))
    assert rte(T0, result.transform) < 0.05
    assert rre(T0.rotation, result.transform.rotation).degrees < 1.0
    assert result.inlier_ratio == pytest.approx(0.5, abs=0.02)
    assert np.all(residuals(result.transform, A.points[result.inliers], B.points[result.inliers]) <= 0.05)


def test_ransac_is_seeded(rng):
    _, matches, A, B = _registration_case(rng, 100, 0.6)
    cfg = RansacConfig(seed=8)
    first, second = ransac_register(matches, A, B, cfg), ransac_register(matches, A, B, cfg)
    np.testing.assert_array_equal(first.transform.as_matrix(), second.transform.as_matrix())
    assert first.iterations == second.iterations


def test_random_matches_are_flagged(rng):
    n = 300
    A = PointCloud(rng.uniform(-5, 5, size=(n, 3)))
    B = PointCloud(rng.uniform(-5, 5, size=(n, 3)))
    ids = np.arange(n)
    result = ransac_register(MatchSet(ids, ids, np.zeros(n)), A, B,
                             RansacConfig(max_iterations=300, inlier_threshold=0.05, seed=0))
    assert result.low_confidence


def test_ransac_needs_three_matches(rng):
    ids = np.arange(2)
    cloud = PointCloud(rng.normal(size=(2, 3)))
    with pytest.raises(TooFewMatches):
        ransac_register(MatchSet(ids, ids, np.zeros(2)), cloud, cloud, RansacConfig())


def test_collinear_matches_are_all_degenerate():
    line = PointCloud(np.outer(np.arange(6.0), [1.0, 0.0, 0.0]))
    ids = np.arange(6)
    with pytest.raises(AllSamplesDegenerate):
        ransac_register(MatchSet(ids, ids, np.zeros(6)), line, line, RansacConfig(max_iterations=10))
