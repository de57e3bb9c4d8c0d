# src/helpers/cloud_io.py
"""
Point cloud files: ASCII XYZ ("x y z" per line) and PLY vertex elements.

PLY reading accepts binary little-endian and ASCII bodies; extra vertex
properties are ignored. Writing always produces binary little-endian float
x/y/z, plus uchar red/green/blue when colours are given.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.core.geometry import PointCloud
from src.exceptions import ParseError, UnsupportedFormat
from src.schemas.constants import CLOUD_FORMAT_MAPPING, PLY_PROPERTY_TYPES

logger = logging.getLogger(__name__)


def cloud_format(path: Path | str, fmt: Optional[str] = None) -> str:
    if fmt is not None:
        if fmt not in set(CLOUD_FORMAT_MAPPING.values()):
            raise UnsupportedFormat(f"unknown cloud format {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix not in CLOUD_FORMAT_MAPPING:
        raise UnsupportedFormat(f"cannot infer cloud format from suffix {suffix!r} ({path})")
    return CLOUD_FORMAT_MAPPING[suffix]


def load_cloud(path: Path | str, fmt: Optional[str] = None) -> PointCloud:
    path = Path(path)
    kind = cloud_format(path, fmt)
    points = _read_xyz(path) if kind == "xyz" else _read_ply(path)
    logger.debug(f"Loaded {len(points)} points from {path}")
    return PointCloud(points)


def save_cloud(cloud: PointCloud, path: Path | str, colors: Optional[np.ndarray] = None,
               fmt: Optional[str] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = cloud_format(path, fmt)
    if kind == "xyz":
        if colors is not None:
            raise UnsupportedFormat("XYZ files cannot carry colours; use .ply")
        np.savetxt(path, cloud.points, fmt="%.17g")
    else:
        _write_ply(path, cloud.points, colors)
    logger.debug(f"Wrote {len(cloud)} points to {path}")


# -------------------------
# XYZ
# -------------------------

def _read_xyz(path: Path) -> np.ndarray:
    rows: List[Tuple[float, float, float]] = []
    with path.open("rb") as f:
        for lineno, raw_line in enumerate(f, start=1):
            try:
                text = raw_line.decode("utf-8").strip()
            except UnicodeDecodeError:
                raise ParseError("line is not valid UTF-8", path=str(path), line=lineno)
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            if len(parts) < 3:
                raise ParseError(f"expected 'x y z', got {text!r}", path=str(path), line=lineno)
            try:
                x, y, z = (float(v) for v in parts[:3])
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {text!r}", path=str(path), line=lineno)
            if not np.isfinite([x, y, z]).all():
                raise ParseError(f"non-finite coordinate in {text!r}", path=str(path), line=lineno)
            rows.append((x, y, z))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


# -------------------------
# PLY
# -------------------------

def _element_count(text: str, path: Path, lineno: int) -> int:
    try:
        count = int(text)
    except ValueError:
        raise ParseError(f"element count {text!r} is not an integer", path=str(path), line=lineno)
    if count < 0:
        raise ParseError(f"negative element count {count}", path=str(path), line=lineno)
    return count


def _read_header(raw: bytes, path: Path) -> Tuple[str, int, List[Tuple[str, str]], int]:
    """(format, vertex count, vertex properties, body offset)"""
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError("missing 'ply' magic or 'end_header'", path=str(path), offset=0)
    newline = raw.find(b"\n", end)
    body = len(raw) if newline < 0 else newline + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    vertex_count = None
    properties: List[Tuple[str, str]] = []
    current = None
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else ""
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line {line!r}", path=str(path), line=lineno)
            current = parts[1]
            if current == "vertex":
                vertex_count = _element_count(parts[2], path, lineno)
            elif vertex_count is None:
                raise UnsupportedFormat(f"element {current!r} before vertex is not supported ({path})")
        elif parts[0] == "property" and current == "vertex":
            if len(parts) < 3:
                raise ParseError(f"malformed property line {line!r}", path=str(path), line=lineno)
            if parts[1] == "list":
                raise UnsupportedFormat(f"list property on vertex is not supported ({path})")
            if parts[1] not in PLY_PROPERTY_TYPES:
                raise ParseError(f"unknown property type {parts[1]!r}", path=str(path), line=lineno)
            properties.append((parts[2], PLY_PROPERTY_TYPES[parts[1]]))

    if fmt not in ("binary_little_endian", "ascii"):
        raise UnsupportedFormat(f"PLY format {fmt!r} is not supported ({path})")
    if vertex_count is None:
        raise ParseError("no vertex element", path=str(path))
    names = [n for n, _ in properties]
    if not {"x", "y", "z"} <= set(names):
        raise ParseError("vertex element lacks x/y/z properties", path=str(path))
    return fmt, vertex_count, properties, body


def _read_ply(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    fmt, count, properties, body = _read_header(raw, path)
    names = [n for n, _ in properties]

    if fmt == "ascii":
        lines = raw[body:].decode("ascii", errors="replace").splitlines()
        if len(lines) < count:
            raise ParseError(f"expected {count} vertex lines, found {len(lines)}", path=str(path))
        cols = [names.index(a) for a in ("x", "y", "z")]
        header_lines = raw[:body].count(b"\n")
        out = np.empty((count, 3))
        for i in range(count):
            parts = lines[i].split()
            try:
                out[i] = [float(parts[c]) for c in cols]
            except (ValueError, IndexError):
                raise ParseError(f"malformed vertex {lines[i]!r}", path=str(path), line=header_lines + i + 1)
        return out

    dtype = np.dtype(properties)
    needed = body + count * dtype.itemsize
    if len(raw) < needed:
        raise ParseError(
            f"vertex data truncated: need {count * dtype.itemsize} bytes, have {len(raw) - body}",
            path=str(path), offset=len(raw),
        )
    records = np.frombuffer(raw, dtype=dtype, count=count, offset=body)
    points = np.stack([records[a].astype(np.float64) for a in ("x", "y", "z")], axis=1)
    if not np.isfinite(points).all():
        bad = int(np.flatnonzero(~np.isfinite(points).all(axis=1))[0])
        raise ParseError("non-finite vertex", path=str(path), offset=body + bad * dtype.itemsize)
    return points


def _write_ply(path: Path, points: np.ndarray, colors: Optional[np.ndarray]) -> None:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64)
        if colors.shape != points.shape:
            raise ValueError(f"colours must have shape {points.shape}, got {colors.shape}")
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    records = np.empty(len(points), dtype=np.dtype(fields))
    for axis, name in enumerate("xyz"):
        records[name] = points[:, axis]
    if colors is not None:
        rgb = np.round(np.clip(colors, 0.0, 1.0) * 255.0).astype(np.uint8)
        for axis, name in enumerate(("red", "green", "blue")):
            records[name] = rgb[:, axis]

    with path.open("wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(records.tobytes())
