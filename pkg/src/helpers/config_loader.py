# src/helpers/config_loader.py
from __future__ import annotations

from pathlib import Path
from typing import Optional

import yaml
from pydantic import ValidationError

from src.core.geometry import PointCloud, RigidTransform
from src.exceptions import ConfigError, ParseError
from src.helpers.cloud_io import load_cloud
from src.helpers.pose_io import load_pose
from src.schemas.config_schemas import GediConfig
from src.schemas.dataset_schemas import DatasetManifest, PairEntry


PROJECT_ROOT = Path(__file__).resolve().parents[2]


def _read_yaml(path: Path) -> dict:
    with path.open("r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(str(exc), path=str(path), line=mark.line + 1 if mark else None) from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def load_config(
    path: Optional[Path | str] = PROJECT_ROOT / "configs" / "default.yaml",
) -> GediConfig:
    if path is None:
        return GediConfig()
    path = Path(path)
    raw = _read_yaml(path)
    try:
        return GediConfig(**raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    raw = _read_yaml(path)
    try:
        return DatasetManifest(**raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(manifest.model_dump(mode="json"), f, sort_keys=False)


def load_pair_files(entry: PairEntry, root: Path) -> tuple[PointCloud, PointCloud, RigidTransform]:
    """Clouds and ground-truth pose of one manifest entry, paths resolved against `root`."""
    return (
        load_cloud(root / entry.cloud_a),
        load_cloud(root / entry.cloud_b),
        load_pose(root / entry.pose),
    )

