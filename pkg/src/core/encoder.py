# src/core/encoder.py
"""
Descriptor network: QNet rotation refinement, set-abstraction hierarchy,
global pooling, head MLP and L2 normalisation to a unit d-vector.

Every dense layer, QNet output included, starts from Glorot-uniform weights
and a zero bias. A QNet whose raw output vanishes (for instance a zeroed
final layer) predicts the identity quaternion and leaves patches unrotated.

Shapes follow [batch, (group,) point, channel]. Every per-point layer is
shared across points, so the model accepts any point count n >= the first
stage's centroid count.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from src import constants as C
from src.core.geometry import UnitQuaternion, quat_to_rotation
from src.core.lrf import CanonicalPatch
from src.core.tensor_engine import (
    ParamStore,
    Tensor,
    concat,
    dense,
    dropout,
    gather_points,
    glorot_uniform,
    l2_normalize,
    max_pool_points,
    quat_to_rotmat,
    relu,
    reshape,
    rotate_points,
)
from src.exceptions import ShapeMismatch, TooFewPoints
from src.schemas.config_schemas import EncoderConfig, SetAbstractionConfig

logger = logging.getLogger(__name__)

IDENTITY_QUATERNION = (1.0, 0.0, 0.0, 0.0)


# -------------------------
# Sampling and grouping
# -------------------------

def farthest_point_sampling(points: np.ndarray, k: int) -> np.ndarray:
    """
    Greedy max-min selection starting at index 0. Selected points are never
    picked twice; ties go to the lowest index. Accepts [N, 3] or [B, N, 3].
    """
    pts = np.asarray(points)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    B, N, _ = pts.shape
    if k > N:
        raise TooFewPoints(f"cannot sample {k} centroids from {N} points")
    idx = np.zeros((B, k), dtype=np.int64)
    if k == 0:
        return idx[0] if single else idx
    rows = np.arange(B)
    dist = np.full((B, N), np.inf)
    dist[rows, 0] = -1.0
    for i in range(1, k):
        last = pts[rows, idx[:, i - 1]]
        d = np.sum((pts - last[:, None, :]) ** 2, axis=-1)
        dist = np.where(dist < 0, dist, np.minimum(dist, d))
        nxt = np.argmax(dist, axis=1)
        idx[:, i] = nxt
        dist[rows, nxt] = -1.0
    return idx[0] if single else idx


def ball_group(points: np.ndarray, centroid_idx: np.ndarray, radius: float, K: int) -> np.ndarray:
    """
    K indices per centroid: in-ball neighbours by ascending distance (stable on
    index), padded with the nearest one; an empty ball yields the centroid itself.
    """
    if radius <= 0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    pts = np.asarray(points)
    cidx = np.asarray(centroid_idx, dtype=np.int64)
    single = pts.ndim == 2
    if single:
        pts, cidx = pts[None], cidx[None]
    B = pts.shape[0]
    centres = pts[np.arange(B)[:, None], cidx]
    d2 = np.sum((pts[:, None, :, :] - centres[:, :, None, :]) ** 2, axis=-1)
    order = np.argsort(d2, axis=-1, kind="stable")[..., :K]
    inside = np.take_along_axis(d2, order, axis=-1) <= radius * radius
    if order.shape[-1] < K:
        pad = np.repeat(order[..., :1], K - order.shape[-1], axis=-1)
        order = np.concatenate([order, pad], axis=-1)
        inside = np.concatenate([inside, np.zeros_like(pad, dtype=bool)], axis=-1)
    nearest = np.where(inside[..., :1], order[..., :1], cidx[..., None])
    groups = np.where(inside, order, nearest)
    return groups[0] if single else groups


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Sort each patch lexicographically by (x, y, z) so the FPS start is order-free."""
    pts = np.asarray(points)
    order = np.lexsort((pts[..., 2], pts[..., 1], pts[..., 0]), axis=-1)
    return np.take_along_axis(pts, order[..., None], axis=-2)


def apply_quaternion(points: np.ndarray, q: UnitQuaternion) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ quat_to_rotation(q).T


# -------------------------
# Model
# -------------------------

def layer_shapes(config: EncoderConfig) -> List[Tuple[str, int, int]]:
    """(name, fan_in, fan_out) for every dense layer, in parameter order."""
    shapes: List[Tuple[str, int, int]] = []

    def chain(prefix: str, width: int, widths: List[int]) -> int:
        for i, out in enumerate(widths):
            shapes.append((f"{prefix}.{i}", width, out))
            width = out
        return width

    if config.qnet.enabled:
        width = chain("qnet.point", 3, config.qnet.point_mlp)
        width = chain("qnet.head", width, config.qnet.head)
        shapes.append(("qnet.out", width, 4))

    features = 0
    for k, sa in enumerate(config.set_abstraction, start=1):
        features = chain(f"sa{k}.mlp", 3 + features, sa.mlp)
    width = chain("global.mlp", 3 + features, config.global_mlp)
    width = chain("head", width, config.head)
    shapes.append(("head.out", width, config.descriptor_dim))
    return shapes


class EncoderModel:
    def __init__(self, config: EncoderConfig, params: Optional[ParamStore] = None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        self._check_params()

    def __repr__(self):
        return (f"EncoderModel(d={self.config.descriptor_dim}, qnet={self.config.qnet.enabled}, "
                f"stages={len(self.config.set_abstraction)}, values={self.params.num_values()})")

    # --------- parameters ---------

    def _init_params(self) -> ParamStore:
        rng = np.random.default_rng(self.config.init_seed)
        store = ParamStore()
        for name, fan_in, fan_out in layer_shapes(self.config):
            store.add(f"{name}.weight", glorot_uniform(fan_in, fan_out, rng))
            store.add(f"{name}.bias", np.zeros(fan_out))
        logger.debug(f"Initialised {len(store)} parameter tensors ({store.num_values()} values)")
        return store

    def _check_params(self) -> None:
        for name, fan_in, fan_out in layer_shapes(self.config):
            for suffix, shape in (("weight", (fan_in, fan_out)), ("bias", (fan_out,))):
                key = f"{name}.{suffix}"
                if key not in self.params:
                    raise ShapeMismatch(f"missing parameter {key}")
                if self.params[key].shape != shape:
                    raise ShapeMismatch(f"{key}: expected {shape}, got {self.params[key].shape}")

    @property
    def descriptor_dim(self) -> int:
        return self.config.descriptor_dim

    @property
    def min_points(self) -> int:
        stages = self.config.set_abstraction
        return stages[0].centroids if stages else 1

    # --------- building blocks ---------

    def _layer(self, x: Tensor, name: str) -> Tensor:
        return dense(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def _mlp(self, x: Tensor, prefix: str, depth: int) -> Tensor:
        for i in range(depth):
            x = relu(self._layer(x, f"{prefix}.{i}"))
        return x

    def qnet(self, x: Tensor) -> Tensor:
        """[B, n, 3] -> unit quaternions [B, 4]; near-zero raw outputs fall back to identity."""
        cfg = self.config.qnet
        h = self._mlp(x, "qnet.point", len(cfg.point_mlp))
        h = max_pool_points(h)
        h = self._mlp(h, "qnet.head", len(cfg.head))
        raw = self._layer(h, "qnet.out")
        norm = np.linalg.norm(raw.data, axis=-1, keepdims=True)
        keep = (norm >= C.QNET_FALLBACK_NORM).astype(raw.dtype)
        if not np.all(keep):
            logger.debug(f"QNet fallback to identity for {int(np.sum(keep == 0))} patch(es)")
        identity = np.asarray(IDENTITY_QUATERNION, dtype=raw.dtype) * (1 - keep)
        return l2_normalize(raw) * keep + identity

    def _set_abstraction(self, xyz: Tensor, feats: Optional[Tensor], sa: SetAbstractionConfig,
                         prefix: str) -> Tuple[Tensor, Tensor]:
        B, N, _ = xyz.shape
        if sa.centroids > N:
            raise TooFewPoints(f"{prefix}: {sa.centroids} centroids requested from {N} points")
        centre_idx = farthest_point_sampling(xyz.data, sa.centroids)
        groups = ball_group(xyz.data, centre_idx, sa.radius, sa.max_neighbours)
        new_xyz = gather_points(xyz, centre_idx)
        grouped = gather_points(xyz, groups) - reshape(new_xyz, (B, sa.centroids, 1, 3))
        if feats is not None:
            grouped = concat([grouped, gather_points(feats, groups)], axis=-1)
        h = self._mlp(grouped, f"{prefix}.mlp", len(sa.mlp))
        return new_xyz, max_pool_points(h)

    # --------- forward ---------

    def forward(self, points: np.ndarray, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        pts = np.asarray(points)
        if pts.ndim != 3 or pts.shape[-1] != 3:
            raise ShapeMismatch(f"expected patches of shape [b, n, 3], got {pts.shape}")
        if pts.shape[1] < self.min_points:
            raise TooFewPoints(f"patches have {pts.shape[1]} points, model needs at least {self.min_points}")

        x = Tensor(canonical_order(pts).astype(self.params.dtype))
        if self.config.qnet.enabled:
            x = rotate_points(x, quat_to_rotmat(self.qnet(x)))

        xyz, feats = x, None
        for k, sa in enumerate(self.config.set_abstraction, start=1):
            xyz, feats = self._set_abstraction(xyz, feats, sa, f"sa{k}")

        grouped = xyz if feats is None else concat([xyz, feats], axis=-1)
        h = max_pool_points(self._mlp(grouped, "global.mlp", len(self.config.global_mlp)))
        h = self._mlp(h, "head", len(self.config.head))
        h = dropout(h, self.config.dropout, rng, training)
        return l2_normalize(self._layer(h, "head.out"))

    __call__ = forward


# -------------------------
# Public helpers
# -------------------------

def qnet_forward(model: EncoderModel, points: np.ndarray) -> UnitQuaternion:
    pts = np.asarray(points, dtype=model.params.dtype)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ShapeMismatch(f"expected [n, 3] points with n >= 1, got {pts.shape}")
    if not model.config.qnet.enabled:
        return UnitQuaternion.identity()
    q = model.qnet(Tensor(pts[None])).data[0].astype(np.float64)
    return UnitQuaternion.from_array(q)


def encode(model: EncoderModel, cp: CanonicalPatch, training: bool = False,
           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    return model.forward(cp.points[None], training, rng).data[0]


def encode_batch(model: EncoderModel, patches: np.ndarray, training: bool = False,
                 rng: Optional[np.random.Generator] = None, chunk_size: Optional[int] = None) -> np.ndarray:
    """[b, n, 3] -> [b, d]; inference may be split into chunks to bound memory."""
    patches = np.asarray(patches)
    if patches.ndim != 3 or patches.shape[-1] != 3:
        raise ShapeMismatch(f"expected a uniform batch of shape [b, n, 3], got {patches.shape}")
    if training or not chunk_size or len(patches) <= chunk_size:
        return model.forward(patches, training, rng).data
    return np.concatenate([
        model.forward(patches[i:i + chunk_size], False, rng).data
        for i in range(0, len(patches), chunk_size)
    ])
