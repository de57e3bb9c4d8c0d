# tests/core/test_lrf.py
import numpy as np
import pytest

from src.core.geometry import PointCloud, RigidTransform, random_rotation
from src.core.lrf import (
    LrfFrame,
    Patch,
    compute_covariance,
    compute_lrf,
    compute_tangent_axis,
    disambiguate_normal,
    extract_patch,
    jacobi_eigh,
    prepare_patch,
    sample_points,
    smallest_eigenvector,
)
from src.exceptions import DegenerateEigen, DegenerateLrf, EmptyPatch, NonPositiveRadius, PatchTooSmall


def _patch(points, radius=1.0):
    return Patch(centre=np.zeros(3), radius=radius, points=np.asarray(points, dtype=float))


def test_extract_patch_errors(blob_cloud):
    with pytest.raises(NonPositiveRadius):
        extract_patch(blob_cloud, np.zeros(3), 0.0)
    with pytest.raises(EmptyPatch):
        extract_patch(blob_cloud, np.full(3, 50.0), 0.5)


def test_sample_points_without_replacement(blob_cloud, rng):
    patch = extract_patch(blob_cloud, np.zeros(3), 10.0)
    sub = sample_points(patch, 100, rng)
    assert len(sub) == 100
    assert len(np.unique(sub.points, axis=0)) == 100


def test_sample_points_pads_small_patch(rng):
    patch = _patch([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    sub = sample_points(patch, 10, rng)
    assert len(sub) == 10
    # every original point appears at least once
    assert len(np.unique(sub.points, axis=0)) == 3


def test_lrf_needs_three_points(rng):
    with pytest.raises(PatchTooSmall):
        sample_points(_patch([[0, 0, 0], [1, 0, 0]]), 5, rng, for_lrf=True)


def test_covariance_divides_by_count():
    p = _patch([[1, 0, 0], [-1, 0, 0]])
    np.testing.assert_allclose(compute_covariance(p), np.diag([1.0, 0.0, 0.0]))


def test_jacobi_matches_numpy(rng):
    for _ in range(20):
        M = rng.normal(size=(3, 3))
        S = M @ M.T
        vals, vecs = jacobi_eigh(S)
        ref_vals, ref_vecs = np.linalg.eigh(S)
        np.testing.assert_allclose(vals, ref_vals, rtol=1e-9, atol=1e-12)
        for k in range(3):
            assert abs(vecs[:, k] @ ref_vecs[:, k]) == pytest.approx(1.0, abs=1e-8)


def test_smallest_eigenvector_errors():
    with pytest.raises(ValueError):
        smallest_eigenvector(np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(DegenerateEigen):
        smallest_eigenvector(np.eye(3))


def test_normal_points_towards_centre():
    p = Patch(centre=np.zeros(3), radius=1.0, points=np.array([[0.1, 0, -0.2], [-0.1, 0, -0.3], [0, 0.1, -0.1]]))
    w = disambiguate_normal(np.array([0.0, 0.0, -1.0]), p)
    np.testing.assert_array_equal(w, [0.0, 0.0, 1.0])


def test_flat_symmetric_patch_has_no_tangent_axis():
    # mirror-symmetric in x and y and no height: the weighted sum vanishes
    ring = np.array([[0.5, 0, 0], [-0.5, 0, 0], [0, 0.5, 0], [0, -0.5, 0]])
    with pytest.raises(DegenerateLrf):
        compute_tangent_axis(_patch(ring), np.array([0.0, 0.0, 1.0]), 1.0)


def test_tangent_sum_is_accumulated_in_metres(rng):
    w = np.array([0.0, 0.0, 1.0])
    r = 2.0
    pts = rng.uniform(-1.0, 1.0, size=(40, 3))
    u = compute_tangent_axis(_patch(pts, radius=r), w, r)
    expected = np.zeros(3)
    for x in pts:
        h = x @ w
        expected += (r - np.linalg.norm(x)) ** 2 * h ** 2 * (x - h * w)
    np.testing.assert_allclose(u, expected / np.linalg.norm(expected), atol=1e-10)


def test_millimetre_patch_falls_below_the_tangent_threshold():
    # the weighted sum scales with the fifth power of the patch size
    w = np.array([0.0, 0.0, 1.0])
    pts = np.array([[0.5, 0.0, 0.3], [0.2, 0.1, -0.2], [-0.1, 0.3, 0.1]])
    compute_tangent_axis(_patch(pts), w, 1.0)
    with pytest.raises(DegenerateLrf):
        compute_tangent_axis(_patch(1e-3 * pts, radius=1e-3), w, 1e-3)


def test_frame_is_right_handed_and_orthonormal(blob_points):
    p = Patch(centre=np.zeros(3), radius=1.0, points=blob_points)
    f = compute_lrf(p)
    R = f.rotation
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert not f.degenerate


def test_canonical_patch_is_invariant_to_rigid_motion(blob_points):
    """Same sample stream on a rotated and translated copy yields the same canonical points."""
    centre = np.zeros(3)
    base = prepare_patch(PointCloud(blob_points), centre, 0.6, 200, 64, np.random.default_rng(5))

    gen = np.random.default_rng(9)
    T = RigidTransform(random_rotation(gen), gen.normal(size=3))
    moved = prepare_patch(PointCloud(T.apply(blob_points)), T.apply(centre[None])[0], 0.6, 200, 64,
                          np.random.default_rng(5))
    np.testing.assert_allclose(moved.points, base.points, atol=1e-7)


def test_canonical_patch_is_invariant_to_scale(blob_points):
    base = prepare_patch(PointCloud(blob_points), np.zeros(3), 0.6, 200, 64, np.random.default_rng(2))
    scaled = prepare_patch(PointCloud(3.0 * blob_points), np.zeros(3), 1.8, 200, 64, np.random.default_rng(2))
    np.testing.assert_allclose(scaled.points, base.points, atol=1e-7)


def _random_patch(gen):
    n = int(gen.integers(80, 300))
    pts = gen.normal(size=(n, 3)) * gen.uniform([0.2, 0.1, 0.02], [0.4, 0.2, 0.06])
    a, b, c = gen.uniform(0.2, 1.0, size=3)
    pts[:, 2] += a * pts[:, 0] ** 2 + b * pts[:, 1]
    pts[:, 1] += c * np.abs(pts[:, 0])
    pts = pts[np.linalg.norm(pts, axis=1) < 1.0]
    centre = gen.normal(size=3)
    return Patch(centre=centre, radius=1.0, points=pts + centre)


def _canonical(p):
    return p.offsets() / p.radius @ compute_lrf(p).rotation.T


def _agrees(p, base, tol):
    try:
        return bool(np.all(np.abs(_canonical(p) - base) < tol))
    except (DegenerateEigen, DegenerateLrf):
        return False


def test_canonical_frame_invariance_over_random_patches():
    gen = np.random.default_rng(2024)
    rigid_ok = scale_ok = shift_ok = total = 0
    while total < 200:
        p = _random_patch(gen)
        try:
            base = _canonical(p)
        except (DegenerateEigen, DegenerateLrf):
            continue
        total += 1

        T = RigidTransform(random_rotation(gen), gen.normal(size=3))
        moved = Patch(centre=T.apply(p.centre[None])[0], radius=p.radius, points=T.apply(p.points))
        s = float(gen.uniform(0.1, 10.0))
        scaled = Patch(centre=s * p.centre, radius=s * p.radius, points=s * p.points)
        shift = gen.normal(size=3)
        shifted = Patch(centre=p.centre + shift, radius=p.radius, points=p.points + shift)

        rigid_ok += _agrees(moved, base, 1e-5)
        scale_ok += _agrees(scaled, base, 1e-9)
        shift_ok += _agrees(shifted, base, 1e-9)

    assert rigid_ok >= 198
    assert scale_ok >= 198
    assert shift_ok >= 198


def test_canonical_points_lie_in_unit_ball(blob_cloud, rng):
    cp = prepare_patch(blob_cloud, np.zeros(3), 0.5, 200, 64, rng)
    assert cp.points.shape == (64, 3)
    assert np.all(np.linalg.norm(cp.points, axis=1) <= 1.0 + 1e-12)


def test_degenerate_frame_falls_back_to_identity_at_inference(rng):
    # a symmetric planar grid: repeated eigenvalues
    g = np.linspace(-0.3, 0.3, 7)
    xx, yy = np.meshgrid(g, g)
    grid = PointCloud(np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1))
    cp = prepare_patch(grid, np.zeros(3), 0.5, 49, 16, rng, retries=0)
    assert cp.degenerate
    assert np.linalg.norm(cp.points, axis=1).max() <= 1.0 + 1e-12


def test_degenerate_frame_raises_after_retries(rng):
    g = np.linspace(-0.3, 0.3, 7)
    xx, yy = np.meshgrid(g, g)
    grid = PointCloud(np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1))
    with pytest.raises((DegenerateEigen, DegenerateLrf)):
        prepare_patch(grid, np.zeros(3), 0.5, 49, 16, rng, retries=2)


def test_identity_frame_without_lrf(blob_cloud, rng):
    cp = prepare_patch(blob_cloud, np.zeros(3), 0.5, 100, 32, rng, use_lrf=False)
    assert not cp.degenerate
    np.testing.assert_array_equal(LrfFrame.identity().rotation, np.eye(3))
