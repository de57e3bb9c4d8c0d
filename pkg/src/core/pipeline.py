# src/core/pipeline.py
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.core.describe import describe_cloud
from src.core.encoder import EncoderModel
from src.core.evaluation import (
    aligned_distances,
    feature_matching_recall,
    inlier_ratio,
    recall_over_tau1,
    recall_over_tau2,
    rre,
    rte,
    success_rate,
)
from src.core.geometry import PointCloud, RigidTransform, apply_transform, compose, euler_to_rotation, invert
from src.core.registration import MatchSet, RegistrationResult, mutual_nearest_neighbors, ransac_register
from src.core.training import TrainingPair, correspondence_tolerance, find_correspondences
from src.exceptions import AllSamplesDegenerate, ConfigError, NoOverlap
from src.helpers.checkpoint_io import load_checkpoint
from src.helpers.config_loader import load_config, load_manifest, load_pair_files
from src.helpers.descriptor_io import DescriptorSet, load_descriptors
from src.helpers.pose_io import load_pose
from src.schemas.config_schemas import GediConfig
from src.schemas.dataset_schemas import PairEntry
from src.schemas.report_schemas import EvalReport, FmrSummary, PairRecord, RegistrationSummary, SweepPoint

logger = logging.getLogger(__name__)

ROTATE_STREAM = 3_000_001


def random_full_rotation(rng: np.random.Generator) -> RigidTransform:
    """Each Euler angle uniform in [0, 360) degrees."""
    ax, ay, az = np.deg2rad(rng.uniform(0.0, 360.0, 3))
    return RigidTransform(euler_to_rotation(ax, ay, az), np.zeros(3))


class RegistrationPipeline:
    def __init__(self, config: GediConfig, model: Optional[EncoderModel] = None):
        self.config = config
        self.model = model

    # --------- construction ---------

    @classmethod
    def from_files(cls, config_path: Optional[str | Path] = None,
                   checkpoint_path: Optional[str | Path] = None) -> "RegistrationPipeline":
        config = load_config(config_path) if config_path is not None else GediConfig()
        model = load_checkpoint(checkpoint_path) if checkpoint_path is not None else None
        if model is not None and model.config != config.encoder:
            logger.info("Encoder architecture taken from the checkpoint, not the config file")
        return cls(config, model)

    # --------- public API ---------

    def describe(self, cloud: PointCloud, num_keypoints: Optional[int] = None,
                 seed: Optional[int] = None) -> DescriptorSet:
        if self.model is None:
            raise ConfigError("describing a cloud needs a trained checkpoint")
        sampling = self.config.sampling
        if num_keypoints is not None:
            sampling = sampling.model_copy(update={"num_keypoints": num_keypoints})
        return describe_cloud(self.model, cloud, sampling, seed=seed)

    def match(self, ds_a: DescriptorSet, ds_b: DescriptorSet) -> MatchSet:
        return mutual_nearest_neighbors(ds_a.descriptors, ds_b.descriptors)

    def register(self, cloud_a: PointCloud, cloud_b: PointCloud,
                 ds_a: DescriptorSet, ds_b: DescriptorSet) -> Tuple[MatchSet, RegistrationResult]:
        matches = self.match(ds_a, ds_b)
        ka, kb = self._keypoint_cloud(cloud_a, ds_a), self._keypoint_cloud(cloud_b, ds_b)
        return matches, ransac_register(matches, ka, kb, self.config.ransac)

    def evaluate(
        self,
        manifest_path: str | Path,
        descriptor_dir: Optional[str | Path] = None,
        pose_dir: Optional[str | Path] = None,
        rotate: bool = False,
        seed: int = 0,
    ) -> EvalReport:
        """
        FMR, RTE/RRE and success rate over every manifest pair that reaches
        the overlap threshold. Descriptors come from `descriptor_dir`
        (`<name>_a.gedf`, `<name>_b.gedf`) or are computed with the model;
        estimated poses come from `pose_dir` (`<name>_est.txt`) or RANSAC.
        """
        if rotate and descriptor_dir is not None:
            raise ConfigError("rotated evaluation recomputes descriptors; do not pass a descriptor directory")
        if rotate and pose_dir is not None:
            raise ConfigError("rotated evaluation re-estimates poses; do not pass a pose directory")

        manifest_path = Path(manifest_path)
        manifest = load_manifest(manifest_path)
        fmr = self.config.fmr
        report = EvalReport(config={
            "fmr": fmr.model_dump(mode="json"),
            "ransac": self.config.ransac.model_dump(mode="json"),
            "rotate": rotate,
            "seed": seed,
        })

        ratios: List[float] = []
        distances: List[np.ndarray] = []
        errors: List[Tuple[float, float]] = []
        scored: List[PairRecord] = []
        for i, entry in enumerate(manifest.pairs):
            A, B, T_gt = load_pair_files(entry, manifest_path.parent)
            overlap = self._pair_overlap(entry, A, B, T_gt)
            if overlap < fmr.min_overlap:
                logger.info(f"{entry.name}: overlap {overlap:.2f} below {fmr.min_overlap:.2f}, skipped")
                report.skipped_pairs.append(entry.name)
                continue
            if rotate:
                R_r = random_full_rotation(np.random.default_rng([seed, i, ROTATE_STREAM]))
                B = apply_transform(R_r, B)
                T_gt = compose(T_gt, invert(R_r))

            ds_a, ds_b = self._pair_descriptors(entry, A, B, descriptor_dir, seed)
            matches = self.match(ds_a, ds_b)
            ka, kb = self._keypoint_cloud(A, ds_a), self._keypoint_cloud(B, ds_b)
            xi = inlier_ratio(matches, ka, kb, T_gt, fmr.tau1)
            ratios.append(xi.value)
            distances.append(aligned_distances(matches, ka, kb, T_gt) if len(matches) else np.empty(0))

            record = PairRecord(name=entry.name, overlap=overlap, num_matches=len(matches),
                                inlier_ratio=xi.value, empty_match_set=xi.empty, rotated=rotate)
            T_e = self._estimate_pose(entry, matches, ka, kb, pose_dir, record)
            if T_e is not None:
                rot = rre(T_gt.rotation, T_e.rotation)
                record.rte, record.rre, record.gimbal_lock = rte(T_gt, T_e), rot.degrees, rot.gimbal_lock
                errors.append((record.rte, record.rre))
                scored.append(record)
            elif pose_dir is None:
                # registration could not run: a failure, not a missing result
                errors.append((math.inf, math.inf))
                scored.append(record)
            report.pairs.append(record)
            logger.info(f"{entry.name}: {len(matches)} matches, inlier ratio {xi.value:.3f}")

        if ratios:
            summary = feature_matching_recall(ratios, fmr.tau2)
            report.fmr = FmrSummary(recall=summary.recall, mean_inlier_ratio=summary.mean,
                                    std_inlier_ratio=summary.std, num_pairs=len(ratios))
            report.tau1_sweep = [SweepPoint(value=v, recall=r)
                                 for v, r in recall_over_tau1(distances, fmr.tau1_sweep, fmr.tau2)]
            report.tau2_sweep = [SweepPoint(value=v, recall=r) for v, r in recall_over_tau2(ratios, fmr.tau2_sweep)]
        if errors:
            ok = success_rate(errors)
            report.registration = RegistrationSummary(success_rate=ok.rate, mean_rte=ok.mean_rte,
                                                      mean_rre=ok.mean_rre, num_pairs=len(errors))
            for record, success in zip(scored, ok.successes):
                record.success = bool(success)
        logger.info(f"Evaluated {len(ratios)} pairs, skipped {len(report.skipped_pairs)}")
        return report

    # --------- helpers ---------

    @staticmethod
    def _keypoint_cloud(cloud: PointCloud, ds: DescriptorSet) -> PointCloud:
        if ds.keypoints is None:
            if len(ds) != len(cloud):
                raise ConfigError(f"descriptor set has {len(ds)} rows but no keypoint ids for a "
                                  f"{len(cloud)}-point cloud")
            return cloud
        return cloud.select(ds.keypoints)

    def _pair_overlap(self, entry: PairEntry, A: PointCloud, B: PointCloud, T: RigidTransform) -> float:
        if entry.overlap is not None:
            return entry.overlap
        pair = TrainingPair(A, B, T, name=entry.name, spacing=entry.spacing)
        try:
            return find_correspondences(pair, correspondence_tolerance(pair, self.config.train.correspondence_tolerance)).overlap
        except NoOverlap:
            return 0.0

    def _pair_descriptors(self, entry: PairEntry, A: PointCloud, B: PointCloud,
                          descriptor_dir: Optional[str | Path], seed: int) -> Tuple[DescriptorSet, DescriptorSet]:
        if descriptor_dir is not None:
            root = Path(descriptor_dir)
            return load_descriptors(root / f"{entry.name}_a.gedf"), load_descriptors(root / f"{entry.name}_b.gedf")
        count = self.config.fmr.num_points
        return self.describe(A, count, seed), self.describe(B, count, seed)

    def _estimate_pose(self, entry: PairEntry, matches: MatchSet, ka: PointCloud, kb: PointCloud,
                       pose_dir: Optional[str | Path], record: PairRecord) -> Optional[RigidTransform]:
        if pose_dir is not None:
            path = Path(pose_dir) / f"{entry.name}_est.txt"
            if not path.exists():
                logger.warning(f"{entry.name}: no estimated pose at {path}")
                return None
            return load_pose(path)
        if len(matches) < self.config.ransac.sample_size:
            logger.warning(f"{entry.name}: {len(matches)} matches, registration not attempted")
            return None
        try:
            result = ransac_register(matches, ka, kb, self.config.ransac)
        except AllSamplesDegenerate as exc:
            logger.warning(f"{entry.name}: {exc}")
            return None
        record.ransac_inlier_ratio = result.inlier_ratio
        record.low_confidence = result.low_confidence
        return result.transform
