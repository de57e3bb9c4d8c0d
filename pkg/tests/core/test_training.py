# tests/core/test_training.py
import numpy as np
import pytest
from scipy import stats

from src.core.encoder import EncoderModel
from src.core.geometry import PointCloud, RigidTransform
from src.core.gradcheck import reduced_encoder_config
from src.core.lrf import CanonicalPatch
from src.core.optim import OptimState
from src.core.training import (
    LOG_COLUMNS,
    AnchorBatch,
    TrainingPair,
    augment_patch,
    build_anchor_batch,
    correspondence_tolerance,
    estimate_spacing,
    find_correspondences,
    margin_report,
    sample_anchor_pairs,
    sample_augmentation_angles,
    train,
    train_step,
)
from src.exceptions import NoOverlap
from src.helpers.checkpoint_io import load_checkpoint
from src.schemas.config_schemas import LossConfig, OptimizerConfig


def _mutual_nn_oracle(pa, pb, tol):
    d = np.linalg.norm(pa[:, None] - pb[None], axis=-1)
    out = []
    for i in range(len(pa)):
        j = int(np.argmin(d[i]))
        if int(np.argmin(d[:, j])) == i and d[i, j] <= tol:
            out.append((i, j))
    return np.array(out)


def test_identical_clouds_correspond_everywhere(rng):
    cloud = PointCloud(rng.uniform(size=(100, 3)))
    corr = find_correspondences(TrainingPair(cloud, cloud, RigidTransform.identity()), 0.01)
    np.testing.assert_array_equal(corr.pairs, np.stack([np.arange(100), np.arange(100)], axis=1))
    np.testing.assert_array_equal(corr.distances, 0.0)
    assert corr.overlap == 1.0


def test_disjoint_clouds_have_no_overlap(rng):
    a = PointCloud(rng.uniform(size=(50, 3)))
    b = PointCloud(rng.uniform(size=(50, 3)) + 10.0)
    with pytest.raises(NoOverlap):
        find_correspondences(TrainingPair(a, b, RigidTransform.identity()), 0.1)


def test_correspondences_match_brute_force(pair_factory, rigid_transform):
    pair = pair_factory(rigid_transform, n=300)
    noisy = PointCloud(pair.cloud_b.points + np.random.default_rng(3).normal(scale=0.01, size=pair.cloud_b.points.shape))
    pair = TrainingPair(pair.cloud_a, noisy, rigid_transform)
    corr = find_correspondences(pair, 0.03)
    expected = _mutual_nn_oracle(pair.cloud_a.points, rigid_transform.apply(noisy.points), 0.03)
    np.testing.assert_array_equal(corr.pairs, expected)


def test_subset_pair_overlap_is_complete(cube_pair):
    corr = find_correspondences(cube_pair, 1e-6)
    assert len(corr) == len(cube_pair.cloud_b)
    assert corr.overlap == pytest.approx(1.0)


def test_spacing_and_tolerance():
    g = np.arange(5) * 0.1
    grid = PointCloud(np.stack(np.meshgrid(g, g, g), axis=-1).reshape(-1, 3))
    assert estimate_spacing(grid) == pytest.approx(0.1)
    pair = TrainingPair(grid, grid, RigidTransform.identity())
    assert correspondence_tolerance(pair, None) == pytest.approx(0.2)
    assert correspondence_tolerance(pair, 0.05) == 0.05
    spaced = TrainingPair(grid, grid, RigidTransform.identity(), spacing=0.3)
    assert correspondence_tolerance(spaced, None) == pytest.approx(0.6)


def test_anchor_sampling_rules():
    corr = np.stack([np.arange(6), np.arange(6) + 10], axis=1)
    picked = sample_anchor_pairs(corr, 6, np.random.default_rng(0))
    assert sorted(map(tuple, picked.tolist())) == sorted(map(tuple, corr.tolist()))

    single = sample_anchor_pairs(corr[:1], 4, np.random.default_rng(0))
    np.testing.assert_array_equal(single, np.repeat(corr[:1], 4, axis=0))

    again = sample_anchor_pairs(corr, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(again, sample_anchor_pairs(corr, 3, np.random.default_rng(5)))

    with pytest.raises(NoOverlap):
        sample_anchor_pairs(np.empty((0, 2)), 3, np.random.default_rng(0))


def test_zero_bound_augmentation_is_identity(rng):
    cp = CanonicalPatch(points=rng.normal(size=(20, 3)), centre=np.zeros(3), radius=1.0)
    np.testing.assert_array_equal(augment_patch(cp, 0.0, rng).points, cp.points)


def test_augmentation_preserves_norms(rng):
    cp = CanonicalPatch(points=rng.normal(size=(20, 3)), centre=np.zeros(3), radius=1.0)
    out = augment_patch(cp, 10.0, rng)
    np.testing.assert_allclose(np.linalg.norm(out.points, axis=1), np.linalg.norm(cp.points, axis=1), atol=1e-6)


def test_augmentation_angles_are_uniform():
    angles = np.rad2deg(sample_augmentation_angles(10.0, np.random.default_rng(1), size=5000))
    assert np.all(np.abs(angles) <= 10.0)
    assert stats.kstest(angles, "uniform", args=(-10.0, 20.0)).pvalue > 1e-3


def test_negative_bound_rejected(rng):
    with pytest.raises(ValueError):
        sample_augmentation_angles(-1.0, rng)


def test_anchor_batch_is_reproducible(cube_pair, tiny_config):
    corr = find_correspondences(cube_pair, 1e-6)
    args = (cube_pair, corr, 6, tiny_config.sampling, 10.0, 0, 4)
    first, second = build_anchor_batch(*args), build_anchor_batch(*args)
    np.testing.assert_array_equal(first.patches_a, second.patches_a)
    np.testing.assert_array_equal(first.patches_b, second.patches_b)
    assert first.patches_a.shape == (len(first), 64, 3)
    # B's centres mapped into A coincide with A's centres
    np.testing.assert_allclose(first.centres_b, first.centres_a, atol=1e-9)


def test_siamese_branches_agree_on_identical_patches(rng):
    model = EncoderModel(reduced_encoder_config(seed=1).model_copy(update={"dropout": 0.3}))
    patches = rng.uniform(-0.5, 0.5, size=(4, 64, 3))
    centres = rng.uniform(-3, 3, size=(4, 3))
    batch = AnchorBatch(patches, patches.copy(), centres, centres.copy(), np.zeros((4, 2), dtype=np.int64))
    opt = OptimState.from_config(OptimizerConfig(), dropout=0.3)
    stats_ = train_step(model, opt, batch, LossConfig(), 0.1, [0, 0, 1])
    assert stats_.positive_mean == 0.0
    assert opt.step == 1


def test_train_step_changes_parameters(tiny_model, rng):
    before = tiny_model.params.state_dict()
    patches = rng.uniform(-0.5, 0.5, size=(4, 64, 3))
    centres = rng.uniform(-3, 3, size=(4, 3))
    batch = AnchorBatch(patches, rng.uniform(-0.5, 0.5, size=(4, 64, 3)), centres, centres,
                        np.zeros((4, 2), dtype=np.int64))
    train_step(tiny_model, OptimState.from_config(OptimizerConfig()), batch, LossConfig(), 0.1)
    after = tiny_model.params.state_dict()
    assert any(not np.array_equal(before[k], after[k]) for k in before)
    assert all(p.grad is None for _, p in tiny_model.params.items())


def test_short_training_run_writes_outputs(cube_pair, tiny_config, tmp_path):
    result = train([cube_pair], tiny_config, out_dir=tmp_path, max_iterations=2)
    assert [r.iteration for r in result.log] == [0, 1]
    lines = (tmp_path / "train_log.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t") == list(LOG_COLUMNS)
    assert len(lines) == 3
    assert (tmp_path / "checkpoint_0000002.gedi").exists()
    reloaded = load_checkpoint(tmp_path / "model.gedi")
    for name, value in result.model.params.state_dict().items():
        np.testing.assert_array_equal(reloaded.params[name].data, value)


def test_training_is_deterministic(cube_pair, tiny_config):
    a = train([cube_pair], tiny_config, max_iterations=2)
    b = train([cube_pair], tiny_config, max_iterations=2)
    assert [r.loss for r in a.log] == [r.loss for r in b.log]


def test_training_without_overlap_fails(rng, tiny_config):
    a = PointCloud(rng.uniform(size=(100, 3)))
    b = PointCloud(rng.uniform(size=(100, 3)) + 10.0)
    with pytest.raises(NoOverlap):
        train([TrainingPair(a, b, RigidTransform.identity(), spacing=0.05)], tiny_config)
    with pytest.raises(ValueError):
        train([], tiny_config)


def test_margin_report_on_holdout(cube_pair, tiny_config, tiny_model):
    report = margin_report(tiny_model, cube_pair, tiny_config)
    assert report.positive_mean >= 0.0
    assert np.isfinite(report.negative_mean) and report.negative_mean > 0.0


@pytest.mark.slow
def test_loss_decreases_on_a_single_pair(cube_pair, tiny_config):
    config = tiny_config.model_copy(update={
        "train": tiny_config.train.model_copy(update={"iterations_per_epoch": 60, "augmentation_deg": 0.0}),
    })
    losses = [r.loss for r in train([cube_pair], config).log]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
