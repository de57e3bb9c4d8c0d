# src/cli.py
"""
Command-line entry point: python -m src.cli <subcommand> [options]

Errors from the library are printed as a single JSON line on stderr
({"error": <code>, "message": <text>}) and exit with status 2.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from src.core.evaluation import descriptor_distance_colors, pca_colors
from src.core.gradcheck import gradcheck_sweep
from src.core.pipeline import RegistrationPipeline
from src.core.training import TrainingPair, train
from src.exceptions import GediError
from src.helpers.cloud_io import load_cloud, save_cloud
from src.helpers.config_loader import load_config, load_manifest, load_pair_files
from src.helpers.descriptor_io import load_descriptors, save_descriptors
from src.helpers.pose_io import save_pose
from src.helpers.scene_generator import generate_dataset
from src.helpers.utils import list_clouds

load_dotenv()

logger = logging.getLogger(__name__)


# -------------------------
# Subcommands
# -------------------------

def cmd_gen(args) -> int:
    config = load_config(args.config)
    spec = config.scene if args.seed is None else config.scene.model_copy(update={"seed": args.seed})
    generate_dataset(spec, args.out, args.pairs, prefix=args.prefix)
    return 0


def _training_pairs(manifest_path: Path) -> List[TrainingPair]:
    manifest = load_manifest(manifest_path)
    pairs = []
    for entry in manifest.pairs:
        A, B, T = load_pair_files(entry, manifest_path.parent)
        pairs.append(TrainingPair(A, B, T, overlap=entry.overlap if entry.overlap is not None else 1.0,
                                  name=entry.name, spacing=entry.spacing))
    return pairs


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"seed": args.seed})})
    pairs = _training_pairs(Path(args.data))
    holdout = _training_pairs(Path(args.holdout))[0] if args.holdout else None
    result = train(pairs, config, out_dir=args.out, holdout=holdout, max_iterations=args.iterations)
    if result.margin is not None:
        print(json.dumps({"positive_mean": result.margin.positive_mean,
                          "negative_mean": result.margin.negative_mean,
                          "margin": result.margin.margin}))
    return 0


def cmd_describe(args) -> int:
    pipeline = RegistrationPipeline.from_files(args.config, args.checkpoint)
    cloud_path, out = Path(args.cloud), Path(args.out)
    # a folder of clouds maps to a folder of <stem>.gedf files
    jobs = [(p, out / f"{p.stem}.gedf") for p in list_clouds(cloud_path)] if cloud_path.is_dir() else [(cloud_path, out)]
    for src_path, dst_path in jobs:
        ds = pipeline.describe(load_cloud(src_path), num_keypoints=args.num_points, seed=args.seed)
        save_descriptors(ds, dst_path)
        logger.info(f"Descriptors for {src_path.name} written to {dst_path}")
    return 0


def cmd_match(args) -> int:
    ds_a, ds_b = load_descriptors(args.a), load_descriptors(args.b)
    matches = RegistrationPipeline(load_config(None)).match(ds_a, ds_b)
    table = np.column_stack([matches.idx_a, matches.idx_b, matches.distance])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, table, fmt=["%d", "%d", "%.9g"], header="row_a row_b distance")
    logger.info(f"{len(matches)} mutual matches written to {out}")
    return 0


def cmd_register(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"ransac": config.ransac.model_copy(update={"seed": args.seed})})
    pipeline = RegistrationPipeline(config)
    matches, result = pipeline.register(
        load_cloud(args.cloud_a), load_cloud(args.cloud_b),
        load_descriptors(args.desc_a), load_descriptors(args.desc_b),
    )
    save_pose(result.transform, args.out)
    print(json.dumps({"matches": len(matches), "inliers": int(len(result.inliers)),
                      "iterations": result.iterations, "inlier_ratio": result.inlier_ratio,
                      "low_confidence": result.low_confidence}))
    return 0


def cmd_eval(args) -> int:
    pipeline = RegistrationPipeline.from_files(args.config, args.checkpoint)
    report = pipeline.evaluate(args.manifest, descriptor_dir=args.descriptors, pose_dir=args.poses,
                               rotate=args.rotate, seed=args.seed)
    text = report.model_dump_json(indent=2)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        logger.info(f"Report written to {out}")
    else:
        print(text)
    return 0


def cmd_pca_viz(args) -> int:
    cloud = load_cloud(args.cloud)
    ds = load_descriptors(args.desc)
    points = cloud.select(ds.keypoints) if ds.keypoints is not None else cloud
    if args.query is not None:
        colors = descriptor_distance_colors(ds.descriptors, args.query)
    else:
        colors = pca_colors(ds.descriptors)
    save_cloud(points, args.out, colors=colors.colors)
    logger.info(f"Coloured cloud written to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck_sweep(seed=args.seed, max_checks_per_param=args.max_checks)
    print(json.dumps(report.as_dict(), indent=2))
    return 0 if report.passed else 3


# -------------------------
# Parser
# -------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gedi", description="Point cloud descriptors and registration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="Generate a synthetic dataset of overlapping pairs.")
    p.add_argument("--config", type=Path, default=None, help="YAML config; its `scene` section is used")
    p.add_argument("--out", type=Path, required=True, help="Output folder (clouds, poses, manifest.yaml)")
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--prefix", default="pair")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="Train the descriptor network on a dataset manifest.")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--data", type=Path, required=True, help="Training manifest.yaml")
    p.add_argument("--out", type=Path, required=True, help="Folder for checkpoints and train_log.tsv")
    p.add_argument("--holdout", type=Path, default=None, help="Manifest whose first pair gets a margin report")
    p.add_argument("--iterations", type=int, default=None, help="Stop after this many iterations")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("describe", help="Describe sampled points of a cloud.")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--cloud", type=Path, required=True, help="Cloud file, or a folder of clouds")
    p.add_argument("--out", type=Path, required=True, help="Descriptor file (.gedf), or a folder for a cloud folder")
    p.add_argument("--num-points", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("match", help="Mutual nearest-neighbour matches between two descriptor files.")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("register", help="Estimate the pose of cloud B in cloud A's frame.")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--cloud-a", type=Path, required=True)
    p.add_argument("--cloud-b", type=Path, required=True)
    p.add_argument("--desc-a", type=Path, required=True)
    p.add_argument("--desc-b", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="4x4 pose file")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="FMR, RTE/RRE and success rate over a manifest.")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--descriptors", type=Path, default=None, help="Folder with <name>_a.gedf / <name>_b.gedf")
    p.add_argument("--poses", type=Path, default=None, help="Folder with <name>_est.txt pose estimates")
    p.add_argument("--rotate", action="store_true", help="Randomly rotate every cloud B before evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="Report JSON (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pca-viz", help="Colour keypoints by descriptor PCA or distance to a query.")
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--desc", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Coloured .ply")
    p.add_argument("--query", type=int, default=None, help="Descriptor row for a distance map instead of PCA")
    p.set_defaults(func=cmd_pca_viz)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every layer and a reduced encoder.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-checks", type=int, default=4, help="Checked entries per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.getenv("GEDI_LOG_LEVEL", "INFO").upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GediError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:
        logger.exception("Unexpected failure")
        print(json.dumps({"error": "unexpected", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
