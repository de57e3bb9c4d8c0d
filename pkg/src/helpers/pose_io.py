# src/helpers/pose_io.py
"""4x4 row-major homogeneous pose files, one matrix row per line."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from src import constants as C
from src.core.geometry import RigidTransform
from src.exceptions import NotRigid, ParseError


def load_pose(path: Path | str) -> RigidTransform:
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 values per row, got {len(parts)}", path=str(path), line=lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise ParseError(f"non-numeric entry in {text!r}", path=str(path), line=lineno)
    if len(rows) != 4:
        raise ParseError(f"expected 4 rows, got {len(rows)}", path=str(path))

    M = np.asarray(rows)
    if not np.isfinite(M).all():
        raise ParseError("pose contains non-finite entries", path=str(path))
    if np.max(np.abs(M[3] - [0.0, 0.0, 0.0, 1.0])) > 1e-9:
        raise NotRigid(f"{path}: last row must be '0 0 0 1', got {M[3].tolist()}")
    return RigidTransform.from_matrix(M).validate(C.POSE_FILE_ORTHONORMAL_TOL)


def save_pose(T: RigidTransform, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, T.as_matrix(), fmt=C.POSE_FORMAT)
