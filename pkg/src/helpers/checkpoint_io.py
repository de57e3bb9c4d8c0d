# src/helpers/checkpoint_io.py
"""
Self-describing model checkpoints (all integers little-endian).

    magic "GEDI" | u32 version
    u32 H, then H hyperparameter records: u16 len | name | u32 len | JSON value
    u32 P, then P parameter records:      u16 len | name | u8 ndim | u32 dims[ndim] | f32 payload
    u32 CRC32 of the parameter region
"""
from __future__ import annotations

import json
import logging
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from pydantic import ValidationError

from src import constants as C
from src.core.encoder import EncoderModel
from src.core.tensor_engine import ParamStore
from src.exceptions import CheckpointError, ShapeMismatch
from src.schemas.config_schemas import EncoderConfig

logger = logging.getLogger(__name__)


def _u(value: int, fmt: str) -> bytes:
    return np.array([value], dtype=fmt).tobytes()


def _name(name: str) -> bytes:
    encoded = name.encode("utf-8")
    return _u(len(encoded), "<u2") + encoded


def encode_checkpoint(model: EncoderModel) -> bytes:
    hyper = model.config.model_dump(mode="json")
    out = [C.CHECKPOINT_MAGIC, _u(C.CHECKPOINT_VERSION, "<u4"), _u(len(hyper), "<u4")]
    for key, value in hyper.items():
        payload = json.dumps(value, sort_keys=True).encode("utf-8")
        out += [_name(key), _u(len(payload), "<u4"), payload]

    region = [_u(len(model.params), "<u4")]
    for name, p in model.params.items():
        data = np.ascontiguousarray(p.data, dtype="<f4")
        region += [_name(name), _u(data.ndim, "u1")]
        region += [_u(dim, "<u4") for dim in data.shape]
        region.append(data.tobytes())
    region_bytes = b"".join(region)
    return b"".join(out) + region_bytes + _u(zlib.crc32(region_bytes), "<u4")


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos} (need {n} more)")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def uint(self, fmt: str) -> int:
        dtype = np.dtype(fmt)
        return int(np.frombuffer(self.take(dtype.itemsize), dtype=dtype)[0])

    def name(self) -> str:
        return self.take(self.uint("<u2")).decode("utf-8")


def decode_checkpoint(raw: bytes, path: str = "<bytes>") -> Tuple[EncoderConfig, "OrderedDict[str, np.ndarray]"]:
    r = _Reader(raw, path)
    if r.take(4) != C.CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.uint("<u4")
    if version != C.CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    hyper: Dict[str, object] = {}
    for _ in range(r.uint("<u4")):
        key = r.name()
        hyper[key] = json.loads(r.take(r.uint("<u4")).decode("utf-8"))

    start = r.pos
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(r.uint("<u4")):
        name = r.name()
        shape = tuple(r.uint("<u4") for _ in range(r.uint("u1")))
        count = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    region = raw[start:r.pos]
    crc = r.uint("<u4")
    if crc != zlib.crc32(region):
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes after CRC")

    try:
        config = EncoderConfig(**hyper)
    except ValidationError as exc:
        raise CheckpointError(f"{path}: invalid architecture record: {exc}") from exc
    return config, state


def save_checkpoint(model: EncoderModel, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(model))
    tmp.replace(path)
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: Path | str) -> EncoderModel:
    path = Path(path)
    config, state = decode_checkpoint(path.read_bytes(), str(path))
    model = EncoderModel(config)
    try:
        model.params.load_state(state)
    except ShapeMismatch as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    logger.info(f"Loaded checkpoint {path}: {model}")
    return model
