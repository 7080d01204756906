"""Command-line entry point.

Subcommands: prepare-data, train-ddpm, train-fpm, generate, evaluate,
ablate. Every flag can instead come from the config file (flags win).
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import ablate as ablate_mod
from . import ctc, manifest, metrics, shapes
from .config import (read_config_file, resolve_generation_config, section_values,
                     validate_config)
from .diffusion import Denoiser, build_schedule, save_denoiser, train_ddpm
from .errors import CellVidGenError, ConfigError
from .flow import FlowRegistrar, save_flow, train_fpm
from .nn import UNet
from .seeding import derive_int_seed
from .synthesis import run_generation


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors (validation failures)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _config_parser(args):
    return read_config_file(args.config) if getattr(args, "config", None) else None


def _pick(flag_value, section: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    return section.get(key, default)


# ---------------------------------------------------------------- prepare-data

def _cmd_prepare_data(args) -> int:
    cp = _config_parser(args)
    paths = section_values(cp, "paths", {"data": str})
    data = args.data if args.data is not None else paths.get("data")
    if data is None:
        raise ConfigError(["paths.data: required (flag --data or config)"])
    size = _pick(args.size, section_values(cp, "generation", {"crop_size": int}),
                 "crop_size", 96)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    tree = ctc.scan_sequence(data)
    result = ctc.extract_crops(tree, size=size)
    pairs = ctc.consecutive_mask_pairs(tree, size=size, stats=result.stats)

    descriptors = []
    bad_descriptors = 0
    for crop in result.crops:
        try:
            descriptors.append(shapes.extract_descriptor(crop.image, crop.mask))
        except CellVidGenError:
            bad_descriptors += 1
    background_values = []
    for f in range(tree.frame_count):
        mask = tree.load_mask(f)
        if (mask == 0).any():
            raw = result.stats.to_normalized(tree.load_raw(f))
            background_values.append(float(np.median(raw[mask == 0])))
    model = shapes.fit(descriptors, background_values=background_values)

    dataset_path = out_dir / "dataset.npz"
    model_path = out_dir / "shape_model.npz"
    ctc.save_dataset(dataset_path, result, pairs)
    shapes.save_model(model_path, model)
    manifest.append_record(out_dir, manifest.new_record(
        "prepare-data",
        config={"data": str(data), "size": size},
        timings={"total": time.perf_counter() - started},
        counters={"crops": len(result.crops), "skipped": result.skipped,
                  "pairs": len(pairs), "descriptors": len(descriptors),
                  "bad_descriptors": bad_descriptors},
    ))
    print(f"prepare-data: {len(result.crops)} crops ({result.skipped} skipped), "
          f"{len(pairs)} mask pairs, shape model with {model.num_modes} modes")
    print(f"wrote {dataset_path} and {model_path}")
    return 0


# ---------------------------------------------------------------- train-ddpm

_DDPM_CASTS = {"iters": int, "batch": int, "lr": float, "seed": int, "t_total": int,
               "beta_start": float, "beta_end": float, "levels": int, "width": int,
               "time_dim": int}


def _cmd_train_ddpm(args) -> int:
    cp = _config_parser(args)
    sect = section_values(cp, "train-ddpm", _DDPM_CASTS)
    paths = section_values(cp, "paths", {"data": str})
    data = args.data if args.data is not None else paths.get("data")
    if data is None:
        raise ConfigError(["paths.data: required (flag --data or config)"])
    iters = _pick(args.iters, sect, "iters", 10000)
    batch = _pick(args.batch, sect, "batch", 32)
    lr = _pick(args.lr, sect, "lr", 5e-4)
    seed = _pick(args.seed, sect, "seed", 0)
    t_total = _pick(args.t_total, sect, "t_total", 1000)
    beta_start = _pick(args.beta_start, sect, "beta_start", 1e-4)
    beta_end = _pick(args.beta_end, sect, "beta_end", 0.02)
    levels = _pick(args.levels, sect, "levels", 4)
    width = _pick(args.width, sect, "width", 32)
    time_dim = _pick(args.time_dim, sect, "time_dim", 64)

    images, _, _, _, stats, _ = ctc.load_dataset(data)
    if images.shape[0] == 0:
        raise ConfigError([f"paths.data: dataset archive {data} contains no crops"])
    schedule = build_schedule(t_total, beta_start, beta_end)
    net = Denoiser(UNet(1, 1, base_width=width, levels=levels, time_dim=time_dim,
                        seed=derive_int_seed(seed, "ddpm-init")))
    started = time.perf_counter()
    result = train_ddpm(images, net, schedule, batch_size=batch, lr=lr, iters=iters,
                        rng_seed=seed)
    wall = time.perf_counter() - started
    run_config = {"data": str(data), "iters": iters, "batch": batch, "lr": lr,
                  "seed": seed, "t_total": t_total, "beta_start": beta_start,
                  "beta_end": beta_end, "levels": levels, "width": width,
                  "time_dim": time_dim}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_denoiser(out, net, schedule, stats, manifest=run_config)
    manifest.append_record(out.parent, manifest.new_record(
        "train-ddpm", config=run_config, seeds={"master": seed},
        timings={"train": wall},
        counters={"iterations": iters, "parameters": net.num_parameters,
                  "diverged": bool(result.diverged)}))
    final = float(np.mean(result.losses[-50:])) if result.losses.size else float("nan")
    print(f"train-ddpm: {iters} iterations in {wall:.1f}s, "
          f"final 50-iter mean loss {final:.5f}; wrote {out}")
    return 0


# ---------------------------------------------------------------- train-fpm

_FPM_CASTS = {"iters": int, "batch": int, "lr": float, "seed": int,
              "lambda_smooth": float, "levels": int, "width": int}


def _cmd_train_fpm(args) -> int:
    cp = _config_parser(args)
    sect = section_values(cp, "train-fpm", _FPM_CASTS)
    paths = section_values(cp, "paths", {"data": str})
    data = args.data if args.data is not None else paths.get("data")
    if data is None:
        raise ConfigError(["paths.data: required (flag --data or config)"])
    iters = _pick(args.iters, sect, "iters", 2000)
    batch = _pick(args.batch, sect, "batch", 32)
    lr = _pick(args.lr, sect, "lr", 1e-4)
    seed = _pick(args.seed, sect, "seed", 0)
    lambda_smooth = _pick(args.lambda_smooth, sect, "lambda_smooth", 0.01)
    levels = _pick(args.levels, sect, "levels", 4)
    width = _pick(args.width, sect, "width", 32)

    _, _, pair_src, pair_tgt, _, _ = ctc.load_dataset(data)
    if pair_src.shape[0] == 0:
        raise ConfigError([f"paths.data: dataset archive {data} contains no mask pairs"])
    net = FlowRegistrar(UNet(2, 2, base_width=width, levels=levels,
                             seed=derive_int_seed(seed, "fpm-init")))
    started = time.perf_counter()
    result = train_fpm(list(zip(pair_src, pair_tgt)), net, batch_size=batch, lr=lr,
                       iters=iters, lambda_smooth=lambda_smooth, rng_seed=seed)
    wall = time.perf_counter() - started
    run_config = {"data": str(data), "iters": iters, "batch": batch, "lr": lr,
                  "seed": seed, "lambda_smooth": lambda_smooth, "levels": levels,
                  "width": width}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_flow(out, net, lambda_smooth, manifest=run_config)
    manifest.append_record(out.parent, manifest.new_record(
        "train-fpm", config=run_config, seeds={"master": seed},
        timings={"train": wall},
        counters={"iterations": iters, "parameters": net.num_parameters,
                  "diverged": bool(result.diverged)}))
    final = float(np.mean(result.losses[-50:])) if result.losses.size else float("nan")
    print(f"train-fpm: {iters} iterations in {wall:.1f}s, "
          f"final 50-iter mean loss {final:.5f}; wrote {out}")
    return 0


# ---------------------------------------------------------------- generate

_GEN_FLAG_KEYS = ("output", "seed", "t_first", "t_next", "num_frames", "num_cells",
                  "num_sequences", "crop_size", "scene_height", "scene_width", "overlap")


def _cmd_generate(args) -> int:
    overrides = {key: getattr(args, key) for key in _GEN_FLAG_KEYS}
    if args.config:
        cfg = validate_config(args.config, overrides)
    else:
        cfg = resolve_generation_config(None, overrides)
    dirs = run_generation(cfg)
    print(f"generate: wrote {len(dirs)} sequence(s): " + ", ".join(str(d) for d in dirs))
    return 0


# ---------------------------------------------------------------- evaluate

def _video_frames(tree: ctc.SequenceTree) -> list:
    return [tree.load_raw(f).astype(np.float64) for f in range(tree.frame_count)]


def _cmd_evaluate(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in ("seg", "tra", "fid", "fvd")]
    if unknown:
        raise ConfigError([f"metrics: unknown metric(s) {', '.join(unknown)}"])
    gt_tree = ctc.scan_sequence(args.gt)
    pred_tree = ctc.scan_sequence(args.pred)
    results = {}
    if "seg" in wanted:
        gt_masks = [gt_tree.load_mask(f) for f in range(gt_tree.frame_count)]
        pred_masks = [pred_tree.load_mask(f) for f in range(pred_tree.frame_count)]
        results["seg"] = metrics.seg_score(gt_masks, pred_masks)
    if "tra" in wanted:
        gt_graph = metrics.TrackingGraph.from_masks(
            [gt_tree.load_mask(f) for f in range(gt_tree.frame_count)], gt_tree.lineage)
        pred_graph = metrics.TrackingGraph.from_masks(
            [pred_tree.load_mask(f) for f in range(pred_tree.frame_count)], pred_tree.lineage)
        results["tra"] = metrics.tra_score(gt_graph, pred_graph)
    if "fid" in wanted:
        results["fid"] = metrics.frechet_distance(
            metrics.embed(_video_frames(gt_tree), args.embedder, "real"),
            metrics.embed(_video_frames(pred_tree), args.embedder, "synthetic"))
    if "fvd" in wanted:
        results["fvd"] = metrics.frechet_distance(
            metrics.embed(_video_frames(gt_tree), args.video_embedder, "real"),
            metrics.embed(_video_frames(pred_tree), args.video_embedder, "synthetic"))

    for key in wanted:
        print(f"{key} = {results[key]:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(
            "".join(f"{k} = {results[k]:.6f}\n" for k in wanted))
        with open(out / "report.csv", "w") as fh:
            fh.write("metric,value\n")
            fh.writelines(f"{k},{results[k]:.6f}\n" for k in wanted)
        manifest.append_record(out, manifest.new_record(
            "evaluate",
            config={"gt": str(args.gt), "pred": str(args.pred),
                    "metrics": args.metrics, "embedder": args.embedder,
                    "video_embedder": args.video_embedder},
            counters={k: results[k] for k in wanted}))
    return 0


# ---------------------------------------------------------------- ablate

def _parse_grid(text: str, name: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError([f"{name}: expected comma-separated integers, got {text!r}"]) from None


def _cmd_ablate(args) -> int:
    overrides = {"output": args.out} if args.out else {}
    cfg = validate_config(args.config, overrides)
    t_first_grid = _parse_grid(args.t_first_grid, "t-first-grid")
    t_next_grid = _parse_grid(args.t_next_grid, "t-next-grid")

    reference_frames = None
    cp = _config_parser(args)
    data = args.data if args.data is not None else section_values(
        cp, "paths", {"data": str}).get("data")
    if data is not None:
        reference_frames = _video_frames(ctc.scan_sequence(data))

    started = time.perf_counter()
    cells = ablate_mod.run_ablation(cfg, t_first_grid, t_next_grid, reference_frames)
    txt, csv_path = ablate_mod.write_report(cfg.output, cells, cfg,
                                            t_first_grid, t_next_grid)
    manifest.append_record(cfg.output, manifest.new_record(
        "ablate",
        config={"config": str(args.config), "t_first_grid": list(t_first_grid),
                "t_next_grid": list(t_next_grid)},
        seeds={"master": cfg.seed},
        timings={"total": time.perf_counter() - started},
        counters={"cells": len(cells),
                  "failed": sum(1 for c in cells if c.status != "ok")}))
    print(txt.read_text())
    print(f"wrote {txt} and {csv_path}")
    return 0


# ---------------------------------------------------------------- wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="cellvidgen",
                     description="Annotated live-cell microscopy video synthesis")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("prepare-data", parents=[], help="extract crops, pairs, and the shape model")
    p.add_argument("--data", help="CTC sequence directory")
    p.add_argument("--out", required=True, help="output directory for dataset.npz + shape_model.npz")
    p.add_argument("--size", type=int, help="crop size (default 96)")
    p.add_argument("--config", help="INI config file")
    p.set_defaults(func=_cmd_prepare_data)

    p = sub.add_parser("train-ddpm", help="train the denoising diffusion model")
    p.add_argument("--data", help="dataset archive from prepare-data")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--t-total", dest="t_total", type=int)
    p.add_argument("--beta-start", dest="beta_start", type=float)
    p.add_argument("--beta-end", dest="beta_end", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--time-dim", dest="time_dim", type=int)
    p.add_argument("--config", help="INI config file")
    p.set_defaults(func=_cmd_train_ddpm)

    p = sub.add_parser("train-fpm", help="train the flow prediction model")
    p.add_argument("--data", help="dataset archive from prepare-data")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda-smooth", dest="lambda_smooth", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--config", help="INI config file")
    p.set_defaults(func=_cmd_train_fpm)

    p = sub.add_parser("generate", help="generate annotated synthetic sequences")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-first", dest="t_first", type=int)
    p.add_argument("--t-next", dest="t_next", type=int)
    p.add_argument("--num-frames", dest="num_frames", type=int)
    p.add_argument("--num-cells", dest="num_cells", type=int)
    p.add_argument("--num-sequences", dest="num_sequences", type=int)
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.add_argument("--scene-height", dest="scene_height", type=int)
    p.add_argument("--scene-width", dest="scene_width", type=int)
    p.add_argument("--overlap", choices=("forbid", "allow"))
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="score a predicted tree against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth sequence directory")
    p.add_argument("--pred", required=True, help="predicted sequence directory")
    p.add_argument("--metrics", default="seg,tra,fid,fvd")
    p.add_argument("--embedder", default="downsample-flatten")
    p.add_argument("--video-embedder", dest="video_embedder",
                   default="clip-downsample-flatten")
    p.add_argument("--out", help="directory for report.txt/report.csv")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep the truncation-step grid")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--out", help="report/output root (overrides paths.output)")
    p.add_argument("--data", help="real sequence for Fréchet reference frames")
    p.add_argument("--t-first-grid", dest="t_first_grid",
                   default=",".join(str(v) for v in ablate_mod.T_FIRST_GRID))
    p.add_argument("--t-next-grid", dest="t_next_grid",
                   default=",".join(str(v) for v in ablate_mod.T_NEXT_GRID))
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1
    except (CellVidGenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
