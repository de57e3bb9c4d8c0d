# src/core/training.py
"""
Siamese training of the descriptor network.

Per iteration: pick a pair, sample b corresponding centres, canonicalise and
augment both sides' patches, encode both sides with the same parameters,
mine hardest negatives in the minibatch, evaluate the contrastive loss,
backpropagate and take an SGD step.

Randomness is keyed, never shared: the patch for slot k of iteration i is
drawn from default_rng([seed, i, k]), so a run is bitwise reproducible
regardless of how patch preparation is spread over threads.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src import constants as C
from src.core.contrastive import LossStats, hardest_contrastive_loss, mine_minibatch
from src.core.encoder import EncoderModel
from src.core.geometry import PointCloud, RigidTransform, euler_to_rotation
from src.core.lrf import CanonicalPatch, prepare_patch
from src.core.optim import OptimState, sgd_step
from src.core.spatial_index import build_spatial_index
from src.exceptions import DegenerateEigen, DegenerateLrf, NoOverlap, NonFiniteLoss, PatchTooSmall
from src.helpers.checkpoint_io import save_checkpoint
from src.helpers.utils import worker_count
from src.schemas.config_schemas import GediConfig, LossConfig, SamplingConfig

logger = logging.getLogger(__name__)

# stream tags mixed into the per-iteration seeds
PAIR_STREAM = 1_000_001
ANCHOR_STREAM = 1_000_002
DROPOUT_STREAM = 1_000_003
HOLDOUT_ITERATION = 2**31 - 1

LOG_COLUMNS = ("iter", "pair", "loss", "pos_mean", "neg_mean", "lr")


@dataclass(frozen=True)
class TrainingPair:
    cloud_a: PointCloud
    cloud_b: PointCloud
    transform: RigidTransform  # maps B into A's frame
    overlap: float = 1.0
    name: str = ""
    spacing: Optional[float] = None


@dataclass(frozen=True)
class Correspondences:
    pairs: np.ndarray       # [k, 2] (id in A, id in B)
    distances: np.ndarray   # [k] metres, after aligning B
    overlap: float

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass
class AnchorBatch:
    patches_a: np.ndarray   # [k, n, 3]
    patches_b: np.ndarray
    centres_a: np.ndarray   # [k, 3] in A's frame
    centres_b: np.ndarray   # [k, 3] B's centres mapped into A's frame
    anchor_ids: np.ndarray  # [k, 2]
    dropped: int = 0

    def __len__(self) -> int:
        return self.patches_a.shape[0]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    pair: int
    loss: float
    positive_mean: float
    negative_mean: float
    lr: float

    def as_row(self) -> str:
        return "\t".join([
            str(self.iteration), str(self.pair), f"{self.loss:.9g}",
            f"{self.positive_mean:.9g}", f"{self.negative_mean:.9g}", f"{self.lr:.9g}",
        ])


@dataclass(frozen=True)
class MarginReport:
    positive_mean: float
    negative_mean: float

    @property
    def margin(self) -> float:
        return self.negative_mean - self.positive_mean


@dataclass
class TrainingResult:
    model: EncoderModel
    log: List[IterationRecord] = field(default_factory=list)
    margin: Optional[MarginReport] = None


# -------------------------
# Correspondences and anchors
# -------------------------

def estimate_spacing(cloud: PointCloud) -> float:
    """Median nearest-neighbour distance."""
    if len(cloud) < 2:
        return 0.0
    d, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return float(np.median(d[:, 1]))


def find_correspondences(pair: TrainingPair, tol: float) -> Correspondences:
    """Mutual nearest neighbours between A and T(B) within `tol`."""
    pa = pair.cloud_a.points
    pb = pair.transform.apply(pair.cloud_b.points)
    d_ab, nn_ab = cKDTree(pb).query(pa, k=1)
    _, nn_ba = cKDTree(pa).query(pb, k=1)

    ids_a = np.arange(len(pa))
    mutual = (nn_ba[nn_ab] == ids_a) & (d_ab <= tol)
    found = np.stack([ids_a[mutual], nn_ab[mutual]], axis=1).astype(np.int64)
    if found.size == 0:
        raise NoOverlap(f"no correspondences within {tol:.4g} m{f' for {pair.name}' if pair.name else ''}")
    overlap = len(found) / min(len(pa), len(pb))
    return Correspondences(pairs=found, distances=d_ab[mutual], overlap=float(overlap))


def correspondence_tolerance(pair: TrainingPair, configured: Optional[float]) -> float:
    if configured is not None:
        return configured
    spacing = pair.spacing if pair.spacing else estimate_spacing(pair.cloud_a)
    return 2.0 * spacing


def sample_anchor_pairs(corr: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """b rows of `corr`, without replacement when enough are available."""
    corr = np.asarray(corr)
    if len(corr) == 0:
        raise NoOverlap("cannot sample anchors from an empty correspondence set")
    replace = len(corr) < b
    return corr[rng.choice(len(corr), size=b, replace=replace)]


def sample_augmentation_angles(bound_deg: float, rng: np.random.Generator, size: int = 3) -> np.ndarray:
    """Angles in radians, each uniform in [-bound, bound] degrees."""
    if bound_deg < 0:
        raise ValueError("augmentation bound must be non-negative")
    return np.deg2rad(rng.uniform(-bound_deg, bound_deg, size=size))


def augment_patch(cp: CanonicalPatch, bound_deg: float, rng: np.random.Generator) -> CanonicalPatch:
    ax, ay, az = sample_augmentation_angles(bound_deg, rng)
    R = euler_to_rotation(ax, ay, az)
    return CanonicalPatch(points=cp.points @ R.T, centre=cp.centre, radius=cp.radius, degenerate=cp.degenerate)


# -------------------------
# Minibatch assembly
# -------------------------

def _training_patch(cloud: PointCloud, centre: np.ndarray, sampling: SamplingConfig,
                    bound_deg: float, seed: int, iteration: int, slot: int) -> Optional[CanonicalPatch]:
    rng = np.random.default_rng([seed, iteration, slot])
    try:
        cp = prepare_patch(cloud, centre, sampling.radius, sampling.m, sampling.n_train, rng,
                           use_lrf=sampling.use_lrf, retries=C.DEGENERATE_RETRIES)
    except (DegenerateEigen, DegenerateLrf, PatchTooSmall) as exc:
        logger.debug(f"iteration {iteration} slot {slot}: dropping patch ({exc})")
        return None
    return augment_patch(cp, bound_deg, rng)


def build_anchor_batch(
    pair: TrainingPair,
    corr: Correspondences,
    b: int,
    sampling: SamplingConfig,
    bound_deg: float,
    seed: int,
    iteration: int,
    executor: Optional[Executor] = None,
) -> AnchorBatch:
    anchors = sample_anchor_pairs(corr.pairs, b, np.random.default_rng([seed, iteration, ANCHOR_STREAM]))
    centres_a = pair.cloud_a.points[anchors[:, 0]]
    centres_b_local = pair.cloud_b.points[anchors[:, 1]]

    jobs = [(pair.cloud_a, centres_a[i], i) for i in range(b)]
    jobs += [(pair.cloud_b, centres_b_local[i], b + i) for i in range(b)]

    def run(job):
        cloud, centre, slot = job
        return _training_patch(cloud, centre, sampling, bound_deg, seed, iteration, slot)

    patches = list(executor.map(run, jobs)) if executor is not None else [run(j) for j in jobs]
    keep = [i for i in range(b) if patches[i] is not None and patches[b + i] is not None]
    dropped = b - len(keep)
    if dropped:
        logger.warning(f"iteration {iteration}: dropped {dropped} of {b} anchors with degenerate frames")

    n = sampling.n_train
    return AnchorBatch(
        patches_a=np.stack([patches[i].points for i in keep]) if keep else np.empty((0, n, 3)),
        patches_b=np.stack([patches[b + i].points for i in keep]) if keep else np.empty((0, n, 3)),
        centres_a=centres_a[keep],
        centres_b=pair.transform.apply(centres_b_local[keep]),
        anchor_ids=anchors[keep],
        dropped=dropped,
    )


# -------------------------
# One optimisation step
# -------------------------

def train_step(
    model: EncoderModel,
    opt: OptimState,
    batch: AnchorBatch,
    loss_cfg: LossConfig,
    exclusion_radius: float,
    dropout_rng_seed: Optional[Sequence[int]] = None,
) -> LossStats:
    """Both branches share the parameters and the dropout stream, so identical patches agree bitwise."""
    seed = list(dropout_rng_seed) if dropout_rng_seed is not None else [0]
    fa = model.forward(batch.patches_a, training=True, rng=np.random.default_rng(seed))
    fb = model.forward(batch.patches_b, training=True, rng=np.random.default_rng(seed))

    neg_a, neg_b = mine_minibatch(fa.data, fb.data, batch.centres_a, batch.centres_b, exclusion_radius)
    loss, stats = hardest_contrastive_loss(fa, fb, neg_a, neg_b, loss_cfg)
    if not math.isfinite(stats.loss):
        raise NonFiniteLoss(f"loss became {stats.loss} at step {opt.step}")

    model.params.zero_grad()
    loss.backward()
    sgd_step(model.params, opt)
    model.params.zero_grad()
    return stats


# -------------------------
# Epoch loop
# -------------------------

def _usable_pairs(pairs: Sequence[TrainingPair], config: GediConfig) -> List[Tuple[TrainingPair, Correspondences]]:
    usable = []
    for k, pair in enumerate(pairs):
        tol = correspondence_tolerance(pair, config.train.correspondence_tolerance)
        try:
            corr = find_correspondences(pair, tol)
        except NoOverlap:
            logger.warning(f"pair {pair.name or k}: no overlap, skipped")
            continue
        if corr.overlap < config.train.min_overlap:
            logger.warning(f"pair {pair.name or k}: overlap {corr.overlap:.2f} below "
                           f"{config.train.min_overlap:.2f}, skipped")
            continue
        indexed = TrainingPair(
            cloud_a=build_spatial_index(pair.cloud_a, config.sampling.radius),
            cloud_b=build_spatial_index(pair.cloud_b, config.sampling.radius),
            transform=pair.transform, overlap=corr.overlap, name=pair.name, spacing=pair.spacing,
        )
        usable.append((indexed, corr))
    return usable


def margin_report(model: EncoderModel, pair: TrainingPair, config: GediConfig,
                  executor: Optional[Executor] = None) -> MarginReport:
    """Mean positive vs mean mined-negative descriptor distance on a pair, inference mode."""
    usable = _usable_pairs([pair], config)
    if not usable:
        raise NoOverlap("held-out pair has no usable overlap")
    indexed, corr = usable[0]
    sampling = config.sampling.model_copy(update={"n_train": config.sampling.n_test})
    batch = build_anchor_batch(indexed, corr, config.loss.anchors_per_pair, sampling, 0.0,
                               config.train.seed, HOLDOUT_ITERATION, executor)
    fa = model.forward(batch.patches_a).data
    fb = model.forward(batch.patches_b).data
    r_c = config.loss.resolve_exclusion_radius(config.sampling.radius)
    neg_a, neg_b = mine_minibatch(fa, fb, batch.centres_a, batch.centres_b, r_c)
    negatives = np.concatenate([neg_a.distance[neg_a.valid], neg_b.distance[neg_b.valid]])
    positives = np.linalg.norm(fa.astype(np.float64) - fb, axis=1)
    return MarginReport(
        positive_mean=float(np.mean(positives)),
        negative_mean=float(np.mean(negatives)) if negatives.size else float("nan"),
    )


def train(
    pairs: Sequence[TrainingPair],
    config: GediConfig,
    out_dir: Optional[Path | str] = None,
    model: Optional[EncoderModel] = None,
    holdout: Optional[TrainingPair] = None,
    max_iterations: Optional[int] = None,
) -> TrainingResult:
    if not pairs:
        raise ValueError("training needs at least one pair")
    usable = _usable_pairs(pairs, config)
    if not usable:
        raise NoOverlap("no training pair reaches the minimum overlap")

    model = model if model is not None else EncoderModel(config.encoder)
    opt = OptimState.from_config(config.optimizer, dropout=config.encoder.dropout)
    r_c = config.loss.resolve_exclusion_radius(config.sampling.radius)
    seed = config.train.seed
    total = config.train.epochs * config.train.iterations_per_epoch
    if max_iterations is not None:
        total = min(total, max_iterations)

    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = (out / "train_log.tsv").open("w", encoding="utf-8")
        log_file.write("\t".join(LOG_COLUMNS) + "\n")

    logger.info(f"Training on {len(usable)} pairs for {total} iterations, "
                f"b={config.loss.anchors_per_pair}, loss weighting '{config.loss.weighting}'")
    result = TrainingResult(model=model)
    try:
        with ThreadPoolExecutor(max_workers=worker_count()) as executor:
            for iteration in range(total):
                opt.epoch = iteration // config.train.iterations_per_epoch
                if iteration % config.train.iterations_per_epoch == 0:
                    logger.info(f"Epoch {opt.epoch}: lr {opt.lr:.3g}")

                pair_id = int(np.random.default_rng([seed, iteration, PAIR_STREAM]).integers(len(usable)))
                pair, corr = usable[pair_id]
                batch = build_anchor_batch(pair, corr, config.loss.anchors_per_pair, config.sampling,
                                           config.train.augmentation_deg, seed, iteration, executor)
                if len(batch) == 0:
                    logger.warning(f"iteration {iteration}: every anchor was degenerate, step skipped")
                    continue

                stats = train_step(model, opt, batch, config.loss, r_c, [seed, iteration, DROPOUT_STREAM])
                record = IterationRecord(iteration, pair_id, stats.loss, stats.positive_mean,
                                         stats.negative_mean, opt.lr)
                result.log.append(record)
                if log_file is not None:
                    log_file.write(record.as_row() + "\n")
                logger.debug(f"iter {iteration} pair {pair_id} loss {stats.loss:.5f}")

                if out is not None and (iteration + 1) % config.train.checkpoint_every == 0:
                    save_checkpoint(model, out / f"checkpoint_{iteration + 1:07d}.gedi")
    finally:
        if log_file is not None:
            log_file.close()

    if out is not None:
        save_checkpoint(model, out / "model.gedi")
    if holdout is not None:
        result.margin = margin_report(model, holdout, config)
        logger.info(f"Held-out margin: positive {result.margin.positive_mean:.4f}, "
                    f"negative {result.margin.negative_mean:.4f}")
    return result
