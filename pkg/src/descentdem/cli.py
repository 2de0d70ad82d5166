"""Command-line entry points: simulate, train, eval."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .dataset import load_dataset, load_heightmap
from .fileio import write_gray_preview_png
from .metrics import aed, coverage_at, nearest_fill, red
from .shading import HapkeParams, SunGeometry
from .simulator import (
    DescentTrajectory,
    emit_dataset,
    gt_heightmap,
    load_terrain_spec,
    load_trajectory,
    make_pseudo_mvs,
)
from .train import TrainConfig, train


def _cmd_simulate(args) -> int:
    spec = load_terrain_spec(args.terrain)
    trajectory = load_trajectory(args.trajectory)
    scene = {}
    if args.scene:
        with open(args.scene, "r", encoding="utf-8") as f:
            scene = json.load(f)
    hapke = HapkeParams.from_dict(scene.get("hapke", {})) if scene.get(
        "hapke"
    ) else HapkeParams()
    if "sun" in scene:
        sun = SunGeometry.from_dict(scene["sun"])
    else:
        sun = SunGeometry.from_angles(np.radians(40.0), np.radians(30.0))
    emit_dataset(
        spec,
        trajectory,
        hapke,
        sun,
        args.out,
        width=args.size,
        height=args.size,
        fov_deg=args.fov,
    )
    if args.mvs_holes > 0 or args.mvs_noise > 0:
        from .dataset import save_heightmap

        pseudo = make_pseudo_mvs(
            gt_heightmap(spec), args.mvs_holes, args.mvs_noise, seed=spec.seed + 99
        )
        save_heightmap(os.path.join(args.out, "pseudo_mvs.pfm"), pseudo)
    print(f"dataset written to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.deterministic:
        config.deterministic = True
    dataset = load_dataset(args.data)
    mvs = None
    if args.mvs:
        mvs = load_heightmap(args.mvs)
        config.mvs_supervision = True
    train(dataset, config, out_dir=args.out, mvs=mvs)
    print(f"checkpoint and DEM written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    pred = load_heightmap(args.pred)
    gt = load_heightmap(args.gt)
    if args.cell_size:
        pred.cell_size = args.cell_size
        gt.cell_size = args.cell_size
    if args.datum_offset:
        # express both maps as height below a common datum (top camera)
        pred = pred.shifted(-args.datum_offset)
        gt = gt.shifted(-args.datum_offset)
    filled = nearest_fill(pred)
    report = {
        "aed": aed(filled, gt),
        "red": red(filled, gt, window_m=args.window),
        "coverage": coverage_at(pred, gt, tau=args.tau),
        "window_m": args.window,
        "tau": args.tau,
    }
    print(f"{'metric':<14}{'value':>14}")
    print(f"{'AED':<14}{report['aed']:>14.4f}")
    print(f"{'RED':<14}{report['red']:>14.4f}")
    print(f"{'Coverage@' + str(args.tau):<14}{report['coverage']:>14.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as f:
            json.dump(report, f, indent=1)
        diff = filled.values.astype(np.float64) - gt.values.astype(np.float64)
        write_gray_preview_png(os.path.join(args.out, "diff.png"), np.abs(diff))
        write_gray_preview_png(os.path.join(args.out, "pred.png"), pred.values)
        write_gray_preview_png(os.path.join(args.out, "gt.png"), gt.values)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descentdem",
        description="DEM reconstruction from fisheye descent imagery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a synthetic descent dataset")
    p_sim.add_argument("--terrain", required=True, help="terrain spec JSON")
    p_sim.add_argument("--trajectory", required=True, help="trajectory JSON")
    p_sim.add_argument("--scene", help="optional JSON with sun/hapke settings")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--size", type=int, default=128, help="image width/height")
    p_sim.add_argument("--fov", type=float, default=150.0, help="FOV in degrees")
    p_sim.add_argument("--mvs-holes", type=float, default=0.0)
    p_sim.add_argument("--mvs-noise", type=float, default=0.0)
    p_sim.set_defaults(func=_cmd_simulate)

    p_train = sub.add_parser("train", help="optimize the dual representation")
    p_train.add_argument("--config", help="TrainConfig JSON")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--mvs", help="optional MVS DEM (PFM) for supervision")
    p_train.add_argument("--deterministic", action="store_true")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="compare predicted and true DEMs")
    p_eval.add_argument("--pred", required=True, help="predicted DEM (PFM)")
    p_eval.add_argument("--gt", required=True, help="ground-truth DEM (PFM)")
    p_eval.add_argument("--cell-size", type=float, default=None)
    p_eval.add_argument("--window", type=float, default=1000.0)
    p_eval.add_argument("--tau", type=float, default=0.1)
    p_eval.add_argument(
        "--datum-offset",
        type=float,
        default=0.0,
        help="datum height (e.g. top camera) subtracted from both maps",
    )
    p_eval.add_argument("--out", help="directory for JSON report and previews")
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
