# src/core/gradcheck.py
"""
Finite-difference verification of the tensor engine.

grad_check promotes the parameters to float64 for the duration of the check,
so the central differences are not swamped by float32 rounding.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from src.core.contrastive import hardest_contrastive_loss, mine_minibatch
from src.core.encoder import EncoderModel
from src.core.tensor_engine import (
    ParamStore,
    Tensor,
    dense,
    dropout,
    l2_normalize,
    max_pool_points,
    quat_to_rotmat,
    relu,
    rotate_points,
    take,
    tsum,
)
from src.exceptions import NonDeterministicGraph
from src.schemas.config_schemas import (
    EncoderConfig,
    LossConfig,
    QNetConfig,
    SetAbstractionConfig,
)

logger = logging.getLogger(__name__)

LAYER_TOLERANCE = 1e-3
ENCODER_TOLERANCE = 1e-2


def grad_check(
    f: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-6,
    max_checks_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    max_i |g_analytic - g_fd| / max(|g_fd|, 1e-6) over the checked entries.
    `f` rebuilds the graph from `params` on every call and returns a scalar.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    original = params.dtype
    params.astype(np.float64)
    try:
        first, second = f().data, f().data
        if not np.array_equal(first, second):
            raise NonDeterministicGraph("two forward passes with identical inputs differ")

        params.zero_grad()
        f().backward()
        analytic = {name: g.copy() for name, g in params.gradients().items()}

        worst = 0.0
        for name, p in params.items():
            flat = p.data.reshape(-1)
            entries = np.arange(flat.size)
            if max_checks_per_param is not None and flat.size > max_checks_per_param:
                entries = rng.choice(flat.size, size=max_checks_per_param, replace=False)
            for i in entries:
                saved = flat[i]
                flat[i] = saved + eps
                plus = f().item()
                flat[i] = saved - eps
                minus = f().item()
                flat[i] = saved
                fd = (plus - minus) / (2.0 * eps)
                err = abs(analytic[name].reshape(-1)[i] - fd) / max(abs(fd), 1e-6)
                worst = max(worst, err)
        return float(worst)
    finally:
        params.zero_grad()
        params.astype(original)


# -------------------------
# Sweep over every layer and the reduced encoder
# -------------------------

@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


@dataclass
class GradcheckReport:
    results: List[GradcheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def as_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "checks": [
                {"name": r.name, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance, "passed": r.passed}
                for r in self.results
            ],
        }


def reduced_encoder_config(seed: int = 0) -> EncoderConfig:
    """Halved widths, dropout off; sized for n = 64 input points."""
    return EncoderConfig(
        qnet=QNetConfig(point_mlp=[32, 64, 128], head=[64]),
        set_abstraction=[
            SetAbstractionConfig(centroids=32, radius=0.2, max_neighbours=16, mlp=[32, 32, 64]),
            SetAbstractionConfig(centroids=8, radius=0.4, max_neighbours=16, mlp=[64, 64, 128]),
        ],
        global_mlp=[128, 256, 512],
        head=[256, 128],
        descriptor_dim=16,
        dropout=0.0,
        init_seed=seed,
        reduced_width=True,
    )


def _layer_checks(rng: np.random.Generator) -> Dict[str, Callable[[], tuple]]:
    def dense_case():
        store = ParamStore()
        x = store.add("x", rng.normal(size=(2, 5, 4)))
        W = store.add("W", rng.normal(size=(4, 3)))
        b = store.add("b", rng.normal(size=3))
        c = rng.normal(size=(2, 5, 3))
        return store, lambda: tsum(dense(x, W, b) * c)

    def relu_case():
        store = ParamStore()
        # keep entries away from the kink
        values = rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        x = store.add("x", values)
        c = rng.normal(size=(3, 4))
        return store, lambda: tsum(relu(x) * c)

    def pool_case():
        store = ParamStore()
        x = store.add("x", rng.normal(size=(2, 6, 5)))
        c = rng.normal(size=(2, 5))
        return store, lambda: tsum(max_pool_points(x) * c)

    def l2_case():
        store = ParamStore()
        x = store.add("x", rng.normal(size=(4, 6)))
        c = rng.normal(size=(4, 6))
        return store, lambda: tsum(l2_normalize(x) * c)

    def rotation_case():
        store = ParamStore()
        q = store.add("q", rng.normal(size=(2, 4)))
        p = store.add("p", rng.normal(size=(2, 5, 3)))
        c = rng.normal(size=(2, 5, 3))
        return store, lambda: tsum(rotate_points(p, quat_to_rotmat(l2_normalize(q))) * c)

    def dropout_case():
        store = ParamStore()
        x = store.add("x", rng.normal(size=(3, 8, 4)))
        c = rng.normal(size=(3, 8, 4))
        mask_seed = int(rng.integers(2**31))
        # a fresh generator per pass keeps the mask fixed across forward passes
        return store, lambda: tsum(dropout(x, 0.3, np.random.default_rng(mask_seed), training=True) * c)

    def composed_case():
        store = ParamStore()
        x = store.add("x", rng.normal(size=(2, 8, 3)))
        W = store.add("W", rng.normal(size=(3, 6)))
        b = store.add("b", rng.normal(size=6))
        c = rng.normal(size=(2, 6))
        return store, lambda: tsum(l2_normalize(max_pool_points(relu(dense(x, W, b)))) * c)

    return {
        "dense": dense_case,
        "relu": relu_case,
        "max_pool_points": pool_case,
        "l2_normalize": l2_case,
        "dropout": dropout_case,
        "quat_rotation": rotation_case,
        "dense_relu_pool_l2": composed_case,
    }


def _encoder_check(rng: np.random.Generator, seed: int, max_checks: int) -> float:
    model = EncoderModel(reduced_encoder_config(seed))
    patches = rng.uniform(-1.0, 1.0, size=(4, 64, 3))
    patches /= np.maximum(1.0, np.linalg.norm(patches, axis=-1, keepdims=True))
    centres = rng.uniform(-2.0, 2.0, size=(4, 3))
    c = rng.normal(size=(4, model.descriptor_dim))
    loss_cfg = LossConfig(exclusion_radius=0.1)

    def f() -> Tensor:
        desc = model.forward(patches, training=False)
        fa = take(desc, np.array([0, 1]))
        fb = take(desc, np.array([2, 3]))
        neg_a, neg_b = mine_minibatch(fa.data, fb.data, centres[:2], centres[2:], 0.1)
        loss, _ = hardest_contrastive_loss(fa, fb, neg_a, neg_b, loss_cfg)
        return loss + tsum(desc * c)

    return grad_check(f, model.params, max_checks_per_param=max_checks, rng=rng)


def gradcheck_sweep(seed: int = 0, max_checks_per_param: int = 4) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    start = time.perf_counter()
    for name, build in _layer_checks(rng).items():
        store, f = build()
        err = grad_check(f, store, rng=rng)
        report.results.append(GradcheckResult(name, err, LAYER_TOLERANCE))
        logger.info(f"gradcheck {name}: max rel error {err:.3e}")

    err = _encoder_check(rng, seed, max_checks_per_param)
    report.results.append(GradcheckResult("encoder", err, ENCODER_TOLERANCE))
    logger.info(f"gradcheck encoder: max rel error {err:.3e}")
    report.seconds = time.perf_counter() - start
    return report
