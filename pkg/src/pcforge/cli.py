"""Command-line front end.

Subcommands: gen-dataset, pose-fit, train, sample, eval, render, replay.
Exit codes: 0 success, 1 gate failure (pose-fit), 2 input error, 3 numerical
divergence. Every file-producing subcommand writes its resolved run config
next to its outputs; ``pcforge replay <config.json>`` re-executes it and
reproduces identical bytes. All randomness flows from the explicit --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import denoiser as dn
from . import fileio, metrics, report
from .camera import CameraPose, Intrinsics, bbox_of_mask, rasterize_points
from .conditioning import build_condition_image
from .diffusion import MODES, make_schedule
from .geometry import center_cloud
from .posefit import optimize_camera_translation


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _warn(msg: str) -> None:
    print(f"pcforge: {msg}", file=sys.stderr)


def _write_run_config(path, command: str, args: argparse.Namespace) -> None:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    fileio.write_json(path, {"command": command, "args": params})


# ---------------------------------------------------------------------------
# gen-dataset
# ---------------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        _warn(f"output directory is not writable: {exc}")
        return 2

    try:
        if args.synthetic is not None:
            records = ds.make_synthetic_buildings(args.synthetic, args.seed,
                                                  args.image_size, args.focal)
        else:
            records = ds.load_geometry_dir(args.geometry, args.image_size)
    except (OSError, ValueError) as exc:
        _warn(str(exc))
        return 2

    if not records:
        _warn("no building geometry found; emitting an empty dataset")

    cfg = ds.GenerationConfig(image_size=args.image_size, focal=args.focal,
                              points=args.points, seed=args.seed,
                              splat_radius=args.splat_radius,
                              t0=tuple(args.t0),
                              split_fractions=tuple(args.split_fractions))
    summary = ds.generate_dataset(records, cfg, out, workers=args.workers)
    _write_run_config(out / "run_config.json", "gen-dataset", args)
    summary["config_hash"] = cfg.hash()
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# pose-fit
# ---------------------------------------------------------------------------

def cmd_pose_fit(args) -> int:
    try:
        cloud = fileio.read_ply(args.cloud)
        mask = fileio.read_mask_pgm(args.mask)
        h, w = mask.shape
        k = Intrinsics(focal=args.focal, cx=w / 2.0, cy=h / 2.0, width=w, height=h)
        fit = optimize_camera_translation(cloud, mask, tuple(args.t0), k,
                                          splat_radius=args.splat_radius)
    except (OSError, ValueError) as exc:
        _warn(str(exc))
        return 2
    print(json.dumps(fit.to_dict(), sort_keys=True))
    return 0 if fit.accepted else 1


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _dataset_intrinsics(root: Path) -> tuple[Intrinsics, float]:
    """Recover the intrinsics/splat radius the dataset was generated with."""
    cfg_path = root / "run_config.json"
    if cfg_path.exists():
        stored = fileio.read_json(cfg_path).get("args", {})
        size = int(stored.get("image_size", 224))
        focal = float(stored.get("focal", 224.0))
        splat = float(stored.get("splat_radius", 1.0))
        return Intrinsics.square(size, focal), splat
    return Intrinsics(), 1.0


def _load_examples(root: Path, split: str, n_points: int, seed: int):
    entries = [e for e in ds.read_manifest(root) if e["status"] == "emitted"]
    if split:
        entries = [e for e in entries if e.get("split") == split]
    if not entries:
        raise ValueError(f"no emitted samples{' in split ' + split if split else ''} "
                         f"under {root}")
    k, splat = _dataset_intrinsics(root)
    examples = []
    for entry in entries:
        s = ds.load_sample(root, entry)
        cloud = s.cloud
        if n_points < len(cloud):
            rng = np.random.default_rng([seed, zlib.crc32(s.id.encode("utf-8"))])
            idx = np.sort(rng.choice(len(cloud), n_points, replace=False))
            cloud = cloud[idx]
        # Subsampling moves the centroid off zero; re-center so zero-mean
        # sampling modes can reproduce the target exactly.
        cloud = center_cloud(cloud)
        condition = build_condition_image(s.image, s.mask, s.sobel)
        pose = CameraPose.top_down(s.pose.tx, s.pose.ty, s.pose.tz)
        examples.append(dn.TrainingExample(cloud, condition, pose, k, s.id))
    return examples, splat


def cmd_train(args) -> int:
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        examples, splat = _load_examples(Path(args.dataset), args.split,
                                         args.points, args.seed)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _warn(str(exc))
        return 2

    schedule = make_schedule("linear", args.T, args.beta_start, args.beta_end)
    cfg = dn.TrainConfig(learning_rate=args.lr, warmup_steps=args.warmup,
                         total_steps=args.steps, batch_size=args.batch,
                         seed=args.seed, mode=args.mode,
                         weight_decay=args.weight_decay)
    model = dn.ToyPointwiseDenoiser(
        feature_channels=examples[0].condition.num_channels,
        schedule=schedule, time_dim=args.time_dim,
        hidden_sizes=args.hidden, seed=args.seed)
    optimizer = dn.AdamW(learning_rate=cfg.learning_rate,
                         weight_decay=cfg.weight_decay,
                         warmup_steps=cfg.warmup_steps)
    rng = np.random.default_rng(args.seed)

    log_rows = []
    try:
        for step in range(1, cfg.total_steps + 1):
            pick = rng.integers(0, len(examples), size=cfg.batch_size)
            batch = [examples[i] for i in pick]
            loss = dn.train_step(model, batch, schedule, cfg, optimizer, rng,
                                 splat_radius=splat)
            log_rows.append({"step": step, "loss": loss,
                             "lr": optimizer.current_lr()})
    except dn.DivergenceError as exc:
        dump = out.with_suffix(out.suffix + ".divergence.json")
        fileio.write_json(dump, {"error": str(exc), "state": exc.state,
                                 "steps_completed": len(log_rows)})
        _warn(f"training diverged: {exc} (state dumped to {dump})")
        return 3

    extra = {"intrinsics": examples[0].intrinsics.to_dict(),
             "splat_radius": splat, "train_points": args.points}
    dn.save_checkpoint(out, model, schedule, cfg.mode, extra=extra)
    log_path = out.with_suffix(out.suffix + ".train.jsonl")
    with open(log_path, "w", encoding="utf-8") as f:
        for row in log_rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    if log_rows:
        report.save_loss_curve(out.with_suffix(out.suffix + ".loss.png"),
                               [r["step"] for r in log_rows],
                               [r["loss"] for r in log_rows],
                               [r["lr"] for r in log_rows])
    _write_run_config(out.with_suffix(out.suffix + ".config.json"), "train", args)
    final = log_rows[-1]["loss"] if log_rows else None
    print(json.dumps({"checkpoint": str(out), "steps": len(log_rows),
                      "final_loss": final}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def cmd_sample(args) -> int:
    out = Path(args.out)
    try:
        model, schedule, mode, header = dn.load_checkpoint(args.ckpt)
        image = fileio.read_pgm(args.image).astype(np.float64) / 255.0
        mask = fileio.read_mask_pgm(args.mask)
        sobel_map = fileio.read_raw_grid(args.sobel)
        external = fileio.read_raw_grid(args.features) if args.features else None
        condition = build_condition_image(image, mask, sobel_map, external)
        if condition.num_channels != model.feature_channels:
            raise ValueError(
                f"condition image has {condition.num_channels} channels but the "
                f"checkpoint expects {model.feature_channels}")
        extra = header.get("extra", {})
        if "intrinsics" in extra:
            k = Intrinsics.from_dict(extra["intrinsics"])
        else:
            k = Intrinsics()
        if (k.height, k.width) != mask.shape:
            raise ValueError(f"condition images are {mask.shape} but the "
                             f"checkpoint was trained at {(k.height, k.width)}")
        splat = float(extra.get("splat_radius", 1.0))
        pose = CameraPose.top_down(*args.pose)
        out.parent.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _warn(str(exc))
        return 2

    try:
        cloud = dn.sample_pointcloud(model, condition, pose, k, schedule,
                                     args.mode or mode, args.n, args.seed,
                                     splat_radius=splat)
    except dn.DivergenceError as exc:
        _warn(f"sampling diverged: {exc}")
        return 3

    fileio.write_ply(out, cloud)
    _write_run_config(out.with_suffix(out.suffix + ".config.json"), "sample", args)
    print(json.dumps({"cloud": str(out), "points": len(cloud),
                      "mode": args.mode or mode}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _resolve_pairs(pred: Path, gt: Path):
    if pred.is_dir() != gt.is_dir():
        raise ValueError("--pred and --gt must both be files or both directories")
    if not pred.is_dir():
        return [(pred.stem, pred, gt)]
    pred_map = {p.stem: p for p in sorted(pred.glob("*.ply"))}
    gt_map = {p.stem: p for p in sorted(gt.glob("*.ply"))}
    missing_gt = sorted(set(pred_map) - set(gt_map))
    missing_pred = sorted(set(gt_map) - set(pred_map))
    if missing_gt or missing_pred:
        raise ValueError("unmatched ids: "
                         + json.dumps({"missing_gt": missing_gt,
                                       "missing_pred": missing_pred}))
    if not pred_map:
        raise ValueError("no .ply files to evaluate")
    return [(bid, pred_map[bid], gt_map[bid]) for bid in sorted(pred_map)]


def cmd_eval(args) -> int:
    try:
        pairs = _resolve_pairs(Path(args.pred), Path(args.gt))
        rows = []
        for bid, ppath, gpath in pairs:
            rep = metrics.fscore(fileio.read_ply(ppath), fileio.read_ply(gpath),
                                 tau=args.tau)
            row = {"id": bid, **rep.to_dict()}
            row["chamfer_x1000"] = rep.chamfer * 1000.0
            rows.append(row)
    except (OSError, ValueError) as exc:
        _warn(str(exc))
        return 2

    keys = ("chamfer", "chamfer_squared", "chamfer_x1000", "fscore",
            "precision", "recall")
    agg = {"id": "aggregate", "pairs": len(rows), "tau": args.tau}
    for key in keys:
        agg[key] = sum(r[key] for r in rows) / len(rows)

    for row in rows:
        print(json.dumps(row, sort_keys=True))
    print(json.dumps(agg, sort_keys=True))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.jsonl", "w", encoding="utf-8") as f:
            for row in rows + [agg]:
                f.write(json.dumps(row, sort_keys=True) + "\n")
        report.save_metrics_chart(out / "metrics.png", rows)
        _write_run_config(out / "run_config.json", "eval", args)
    return 0


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

def cmd_render(args) -> int:
    try:
        cloud = fileio.read_ply(args.cloud)
        size = args.image_size
        k = Intrinsics.square(size, args.focal)
        pose = CameraPose.top_down(*args.pose)
        mask, depth_map = rasterize_points(cloud, pose, k, args.splat_radius)
        if not mask.any():
            raise ValueError("nothing visible: the cloud projects to an empty image")
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError) as exc:
        _warn(str(exc))
        return 2

    owner = depth_map.owner
    img = np.zeros_like(mask, dtype=np.float64)
    occ = owner >= 0
    z = cloud[owner[occ], 2]
    span = z.max() - z.min()
    if span > 0:
        # Bright = high (the -z side faces the default top-down camera).
        img[occ] = 0.2 + 0.8 * (z.max() - z) / span
    else:
        img[occ] = 0.6
    fileio.write_pgm(args.out, img)
    if args.figure:
        report.save_cloud_views(args.figure, cloud)
    _write_run_config(Path(args.out).with_suffix(Path(args.out).suffix + ".config.json"),
                      "render", args)
    bbox = bbox_of_mask(mask)
    print(json.dumps({"image": str(args.out),
                      "bbox": [bbox.x_min, bbox.x_max, bbox.y_min, bbox.y_max]},
                     sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def cmd_replay(args) -> int:
    try:
        stored = fileio.read_json(args.config)
        command = stored["command"]
        params = stored["args"]
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _warn(f"cannot load run config: {exc}")
        return 2
    if command not in _COMMANDS:
        _warn(f"unknown command {command!r} in run config")
        return 2
    ns = argparse.Namespace(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in params.items()})
    return _COMMANDS[command](ns)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcforge",
        description="Single-aerial-image 3D building point cloud toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a dataset from geometry or synthetic buildings")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--geometry", help="directory of <id>.obj/.vertices/.faces[/.pgm]")
    src.add_argument("--synthetic", type=int, help="number of synthetic buildings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=ds.DEFAULT_POINTS)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--focal", type=float, default=224.0)
    p.add_argument("--splat-radius", type=float, default=1.0)
    p.add_argument("--t0", type=_parse_triple, default=(0.0, 0.0, 1.0))
    p.add_argument("--split-fractions", type=_parse_floats, default=(1.0,))
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("pose-fit", help="recover the camera translation for a cloud/mask pair")
    p.add_argument("--cloud", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--t0", type=_parse_triple, default=(0.0, 0.0, 1.0))
    p.add_argument("--focal", type=float, default=224.0)
    p.add_argument("--splat-radius", type=float, default=1.0)
    p.set_defaults(func=cmd_pose_fit)

    p = sub.add_parser("train", help="train the toy denoiser on a generated dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=MODES, default="cdpm")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--T", type=int, default=100, help="diffusion steps")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=1024, help="points per training cloud")
    p.add_argument("--hidden", type=_parse_ints, default=(64, 64))
    p.add_argument("--time-dim", type=int, default=8)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--split", default="", help="train on this split only (default: all emitted)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a cloud from a checkpoint and condition images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--sobel", required=True)
    p.add_argument("--features", default=None, help="optional external feature grid (.raw)")
    p.add_argument("--pose", type=_parse_triple, default=(0.0, 0.0, 1.0))
    p.add_argument("--mode", choices=MODES, default=None,
                   help="override the checkpoint's sampling mode")
    p.add_argument("--n", type=int, default=ds.DEFAULT_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="Chamfer/F-Score for prediction vs ground truth clouds")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=metrics.DEFAULT_TAU)
    p.add_argument("--out", default=None, help="directory for metrics.jsonl + figure")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="z-buffered height-colored view of a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--pose", type=_parse_triple, default=(0.0, 0.0, 1.0))
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--focal", type=float, default=224.0)
    p.add_argument("--splat-radius", type=float, default=1.0)
    p.add_argument("--figure", default=None, help="also write a matplotlib PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("replay", help="re-run a stored run_config.json")
    p.add_argument("config")
    p.set_defaults(func=cmd_replay)

    return parser


_COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "pose-fit": cmd_pose_fit,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
