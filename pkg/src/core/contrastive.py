# src/core/contrastive.py
"""
Hardest-contrastive objective with spherical negative exclusion.

For anchor pairs (f_i, f'_i), i < b, the loss is

    1/b * Σ_i ( w₊ [d(f_i, f'_i) − m₊]₊²
               + w₋(f_i)  [m₋ − d(f_i,  ñ_i)]₊²
               + w₋(f'_i) [m₋ − d(f'_i, ñ'_i)]₊² )

where ñ is the closest descriptor in the minibatch pool whose patch centre
lies farther than r_C from the anchor's centre. Weighting:

    literal:       w₊ = 1/|C₊|,  w₋(f) = 1/(2|C₋(f)|)
    conventional:  w₊ = 1,       w₋(f) = 1/2

An anchor with an empty C₋ contributes no negative term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.core.tensor_engine import Tensor, concat, relu, sqrt, take, tsum
from src.exceptions import ShapeMismatch
from src.schemas.config_schemas import LossConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MinedNegatives:
    index: np.ndarray     # pool index of the hardest admissible negative, -1 when C₋ is empty
    count: np.ndarray     # |C₋(f)| per anchor
    distance: np.ndarray  # descriptor distance to the selected negative, nan when C₋ is empty

    @property
    def valid(self) -> np.ndarray:
        return self.index >= 0


@dataclass(frozen=True)
class LossStats:
    loss: float
    positive_mean: float
    negative_mean: float
    empty_negative_sets: int
    weighting: str


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def mine_hardest_negatives(
    anchor_desc: np.ndarray,
    anchor_centres: np.ndarray,
    pool_desc: np.ndarray,
    pool_centres: np.ndarray,
    exclusion_radius: float,
    exclude: Optional[np.ndarray] = None,
) -> MinedNegatives:
    """
    For each anchor, the pool entry of minimum descriptor distance among those
    whose centre is strictly farther than `exclusion_radius` from the anchor
    centre. `exclude[i]` lists pool indices never admissible for anchor i
    (its own entry and its positive). Ties go to the lowest pool index.
    """
    anchor_desc = np.asarray(anchor_desc)
    pool_desc = np.asarray(pool_desc)
    if anchor_desc.shape[1:] != pool_desc.shape[1:]:
        raise ShapeMismatch(f"descriptor widths differ: {anchor_desc.shape} vs {pool_desc.shape}")

    admissible = pairwise_distances(anchor_centres, pool_centres) > exclusion_radius
    if exclude is not None:
        rows = np.repeat(np.arange(len(anchor_desc)), np.asarray(exclude).shape[1])
        admissible[rows, np.asarray(exclude).reshape(-1)] = False

    dist = np.where(admissible, pairwise_distances(anchor_desc, pool_desc), np.inf)
    count = admissible.sum(axis=1)
    index = np.where(count > 0, np.argmin(dist, axis=1), -1)
    chosen = np.where(count > 0, dist[np.arange(len(index)), np.maximum(index, 0)], np.nan)
    return MinedNegatives(index=index.astype(np.int64), count=count.astype(np.int64), distance=chosen)


def mine_minibatch(desc_a: np.ndarray, desc_b: np.ndarray, centres_a: np.ndarray,
                   centres_b: np.ndarray, exclusion_radius: float) -> Tuple[MinedNegatives, MinedNegatives]:
    """
    Mining over the pool of both branches' 2b descriptors; `centres_b` must
    already be expressed in A's frame. Pool index i is f_i, b + i is f'_i.
    """
    b = len(desc_a)
    pool_desc = np.concatenate([desc_a, desc_b])
    pool_centres = np.concatenate([centres_a, centres_b])
    own = np.arange(b)
    neg_a = mine_hardest_negatives(desc_a, centres_a, pool_desc, pool_centres, exclusion_radius,
                                   exclude=np.stack([own, own + b], axis=1))
    neg_b = mine_hardest_negatives(desc_b, centres_b, pool_desc, pool_centres, exclusion_radius,
                                   exclude=np.stack([own + b, own], axis=1))
    return neg_a, neg_b


def _distance(x: Tensor, y: Tensor) -> Tensor:
    diff = x - y
    return sqrt(tsum(diff * diff, axis=-1))


def _negative_weights(neg: MinedNegatives, b: int, weighting: str) -> np.ndarray:
    if weighting == "literal":
        return np.where(neg.valid, 1.0 / (b * 2.0 * np.maximum(neg.count, 1)), 0.0)
    return np.where(neg.valid, 1.0 / (2.0 * b), 0.0)


def hardest_contrastive_loss(fa: Tensor, fb: Tensor, neg_a: MinedNegatives, neg_b: MinedNegatives,
                             cfg: LossConfig) -> Tuple[Tensor, LossStats]:
    if fa.shape != fb.shape or fa.ndim != 2:
        raise ShapeMismatch(f"anchor descriptors must be matching [b, d] arrays, got {fa.shape} and {fb.shape}")
    b = fa.shape[0]
    dtype = fa.dtype
    pool = concat([fa, fb], axis=0)

    pos_d = _distance(fa, fb)
    w_pos = 1.0 / (b * b) if cfg.weighting == "literal" else 1.0 / b
    loss = tsum(relu(pos_d - cfg.positive_margin) ** 2) * w_pos

    neg_dists = []
    for anchors, neg in ((fa, neg_a), (fb, neg_b)):
        if not np.any(neg.valid):
            continue
        nd = _distance(anchors, take(pool, np.maximum(neg.index, 0)))
        weights = _negative_weights(neg, b, cfg.weighting).astype(dtype)
        loss = loss + tsum(relu(cfg.negative_margin - nd) ** 2 * weights)
        neg_dists.append(nd.data[neg.valid])

    empty = int(np.sum(~neg_a.valid) + np.sum(~neg_b.valid))
    if empty:
        logger.warning(f"{empty} of {2 * b} anchors have an empty negative set")
    negatives = np.concatenate(neg_dists) if neg_dists else np.empty(0)
    stats = LossStats(
        loss=float(loss.item()),
        positive_mean=float(np.mean(pos_d.data)),
        negative_mean=float(np.mean(negatives)) if negatives.size else float("nan"),
        empty_negative_sets=empty,
        weighting=cfg.weighting,
    )
    return loss, stats
