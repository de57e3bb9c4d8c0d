# src/helpers/utils.py
import os
from pathlib import Path
from typing import Iterable, List, Tuple

from dotenv import load_dotenv

from src.schemas.constants import CLOUD_FORMAT_MAPPING

load_dotenv()


def list_files_with_suffix(
    root: Path,
    suffixes: Iterable[str],
) -> List[Path]:
    """
    Recursively list all files under `root` that end with any of `suffixes`.

    Example:
        list_files_with_suffix(Path("data"), [".ply", ".xyz"])
    """
    root = Path(root).resolve()
    suffixes_tuple: Tuple[str, ...] = tuple(s.lower() for s in suffixes)
    return sorted(
        p for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in suffixes_tuple
    )


def list_clouds(root: Path) -> List[Path]:
    return list_files_with_suffix(root, CLOUD_FORMAT_MAPPING.keys())


def worker_count() -> int:
    """Thread count for patch preparation: GEDI_THREADS, else the CPU count."""
    raw = os.getenv("GEDI_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"GEDI_THREADS must be an integer, got {raw!r}")
    return os.cpu_count() or 1
