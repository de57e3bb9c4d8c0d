# src/helpers/descriptor_io.py
"""
Descriptor files.

    magic "GEDF" | u32 version | u32 count | u32 d | count*d little-endian f32

A text sidecar `<stem>.keypoints.txt` lists, per record, the sampled point
index in the source cloud and a 0/1 flag marking descriptors computed with
the identity frame substituted for a degenerate one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from src import constants as C
from src.exceptions import ParseError

logger = logging.getLogger(__name__)

_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("count", "<u4"), ("dim", "<u4")])


@dataclass(frozen=True)
class DescriptorSet:
    descriptors: np.ndarray
    keypoints: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


def sidecar_path(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.keypoints.txt")


def save_descriptors(ds: DescriptorSet, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    desc = np.ascontiguousarray(ds.descriptors, dtype="<f4")
    header = np.array([(C.DESCRIPTOR_MAGIC, C.DESCRIPTOR_VERSION, desc.shape[0], desc.shape[1])], dtype=_HEADER)
    with path.open("wb") as f:
        f.write(header.tobytes())
        f.write(desc.tobytes())

    if ds.keypoints is not None:
        flags = ds.degenerate if ds.degenerate is not None else np.zeros(len(ds.keypoints), dtype=bool)
        table = np.stack([np.asarray(ds.keypoints, dtype=np.int64), np.asarray(flags, dtype=np.int64)], axis=1)
        np.savetxt(sidecar_path(path), table, fmt="%d")
    logger.debug(f"Wrote {desc.shape[0]} descriptors (d={desc.shape[1]}) to {path}")


def load_descriptors(path: Path | str, check_norms: bool = True) -> DescriptorSet:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.itemsize:
        raise ParseError("file shorter than the descriptor header", path=str(path), offset=len(raw))
    header = np.frombuffer(raw, dtype=_HEADER, count=1)[0]
    if header["magic"] != C.DESCRIPTOR_MAGIC:
        raise ParseError(f"bad magic {header['magic']!r}", path=str(path), offset=0)
    if header["version"] != C.DESCRIPTOR_VERSION:
        raise ParseError(f"unsupported descriptor version {int(header['version'])}", path=str(path), offset=4)

    count, dim = int(header["count"]), int(header["dim"])
    expected = _HEADER.itemsize + count * dim * 4
    if len(raw) != expected:
        raise ParseError(f"expected {expected} bytes, got {len(raw)}", path=str(path), offset=min(len(raw), expected))
    desc = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=_HEADER.itemsize).reshape(count, dim)

    if check_norms and count:
        norms = np.linalg.norm(desc.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > C.DESCRIPTOR_NORM_TOL)
        if bad.size:
            i = int(bad[0])
            raise ParseError(f"record {i} has norm {norms[i]:.6f}, expected 1",
                             path=str(path), offset=_HEADER.itemsize + i * dim * 4)

    keypoints = degenerate = None
    side = sidecar_path(path)
    if side.exists():
        table = np.loadtxt(side, dtype=np.int64, ndmin=2)
        if table.shape[0] != count:
            raise ParseError(f"sidecar lists {table.shape[0]} keypoints for {count} descriptors", path=str(side))
        keypoints = table[:, 0]
        degenerate = table[:, 1].astype(bool) if table.shape[1] > 1 else np.zeros(count, dtype=bool)
    return DescriptorSet(descriptors=np.array(desc), keypoints=keypoints, degenerate=degenerate)
