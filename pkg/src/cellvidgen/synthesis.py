"""Inference pipeline: per-cell video generation and multi-cell scenes.

A cell video starts from a mask sequence sampled by the shape model. The
first frame is textured by a long truncated diffusion round trip; every
following frame warps the previous texture along the predicted flow between
consecutive masks and refines it with a short round trip. Finished videos
are placed into a larger scene with random walk motion and small rotations,
composited over a noisy background, and written as a CTC tree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import ctc, manifest, shapes
from .config import GenerationConfig
from .diffusion import (Denoiser, NoiseSchedule, diffuse_then_denoise,
                        guided_generate, load_denoiser)
from .errors import CheckpointError, ConfigError, PlacementError
from .flow import FlowRegistrar, load_flow, predict_flow, warp
from .normalize import NormalizationStats
from .seeding import derive_int_seed, rng_for


@dataclass(frozen=True)
class CellVideo:
    """Single-cell texture/mask sequence plus its generation manifest."""

    frames: tuple      # (H, W) float64 rasters in the normalized domain
    masks: tuple       # (H, W) uint16 {0,1} rasters
    brightness: np.ndarray
    record: dict       # t_first, t_next, seed, size, denoiser_evals

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> int:
        return int(self.frames[0].shape[0])


def _check_divisible(size: int, net_name: str, levels: int) -> None:
    factor = 2 ** (levels - 1)
    if size % factor:
        raise CheckpointError(
            f"raster size {size} is not divisible by the {net_name} downsampling "
            f"factor {factor}; the checkpoint and requested size disagree")


def generate_cell_video(trajectory: shapes.ShapeTrajectory, model: shapes.ShapeModel,
                        ddpm: Denoiser, schedule: NoiseSchedule, fpm: FlowRegistrar,
                        t_first: int, t_next: int, rng_seed: int, size: int = 96,
                        stochastic: bool = True) -> CellVideo:
    """Render masks from the trajectory and texture them frame by frame.

    Frame 0 runs ``t_first`` reverse steps on the noised guidance image; each
    later frame is the previous texture warped along the mask-to-mask flow
    and refined for ``t_next`` steps (0 = pass the warp through untouched).
    Total denoiser evaluations: t_first + (num_frames - 1) * t_next.
    """
    if not 1 <= t_first <= schedule.T:
        raise ValueError(f"t_first must be in [1, {schedule.T}], got {t_first}")
    if not 0 <= t_next <= t_first:
        raise ValueError(f"t_next must be in [0, t_first={t_first}], got {t_next}")
    _check_divisible(size, "denoiser", ddpm.unet.levels)
    _check_divisible(size, "flow", fpm.unet.levels)

    masks = tuple(shapes.render_mask(model, trajectory.params[f], size)
                  for f in range(trajectory.num_frames))
    evals_before = ddpm.eval_count
    frames = [guided_generate(masks[0], float(trajectory.brightness[0]), t_first,
                              ddpm, schedule, rng_for(rng_seed, "frame", 0),
                              bg_level=model.background_mean, stochastic=stochastic)]
    for f in range(trajectory.num_frames - 1):
        field = predict_flow(fpm, masks[f], masks[f + 1])
        warped = warp(frames[f], field)
        frames.append(diffuse_then_denoise(warped, t_next, ddpm, schedule,
                                           rng_for(rng_seed, "frame", f + 1),
                                           stochastic=stochastic))
    frames = tuple(np.clip(fr, -1.0, 1.0) for fr in frames)
    record = {
        "t_first": t_first, "t_next": t_next, "seed": int(rng_seed), "size": size,
        "num_frames": trajectory.num_frames,
        "denoiser_evals": ddpm.eval_count - evals_before,
    }
    return CellVideo(frames=frames, masks=masks,
                     brightness=np.asarray(trajectory.brightness).copy(), record=record)


@dataclass(frozen=True)
class CellPlacement:
    """Per-frame integer window origins and rotation angles for one cell."""

    label: int
    origins: np.ndarray  # (F, 2) window top-left (row, col), may leave the scene only via clamping rules
    angles: np.ndarray   # (F,) degrees


@dataclass(frozen=True)
class ComposedScene:
    recording: ctc.SceneRecording
    placements: tuple


def _sample_placement(video_size: int, scene: tuple, num_frames: int,
                      motion_sigma: float, rotation_sigma_deg: float,
                      rng: np.random.Generator):
    """One candidate trajectory keeping the full crop window inside the scene."""
    steps = rng.normal(0.0, motion_sigma, size=(num_frames, 2))
    steps[0] = 0.0
    walk = np.cumsum(steps, axis=0)
    theta0 = rng.uniform(0.0, 360.0)
    dtheta = rng.normal(0.0, rotation_sigma_deg, size=num_frames)
    dtheta[0] = 0.0
    angles = theta0 + np.cumsum(dtheta)
    lo = -walk.min(axis=0)
    hi = np.array([scene[0] - video_size, scene[1] - video_size]) - walk.max(axis=0)
    if np.any(hi < lo):
        return None
    start = np.array([rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1])])
    origins = np.rint(start + walk).astype(np.int64)
    origins = np.clip(origins, 0, [scene[0] - video_size, scene[1] - video_size])
    return origins, angles


def _swept_box(origins: np.ndarray, size: int):
    r0, c0 = origins.min(axis=0)
    r1, c1 = origins.max(axis=0) + size
    return r0, c0, r1, c1


def _boxes_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def compose_scene(videos, scene_size: tuple, rng_seed: int,
                  motion_sigma: float = 2.0, rotation_sigma_deg: float = 1.0,
                  background: tuple = (-0.9, 0.02), stats: NormalizationStats = None,
                  allow_overlap: bool = False, max_attempts: int = 100) -> ComposedScene:
    """Place finished cell videos into one annotated scene.

    Every cell gets a random initial position/orientation and a per-frame
    random-walk translation plus small rotation. Under the default overlap
    policy the swept crop windows of any two cells must stay disjoint;
    placement is re-drawn up to ``max_attempts`` times before failing.
    """
    videos = list(videos)
    if not videos:
        raise PlacementError("no cell videos to place")
    num_frames = videos[0].num_frames
    H, W = int(scene_size[0]), int(scene_size[1])
    if any(v.num_frames != num_frames for v in videos):
        raise PlacementError("cell videos disagree on frame count")
    if stats is None:
        stats = NormalizationStats(lo=0.0, hi=65535.0)

    placements = []
    taken = []
    for idx, video in enumerate(videos):
        size = video.size
        if size > min(H, W):
            raise PlacementError(f"cell video size {size} exceeds scene {H}x{W}")
        rng = rng_for(rng_seed, "placement", idx)
        placed = None
        for _ in range(max_attempts):
            candidate = _sample_placement(size, (H, W), num_frames, motion_sigma,
                                          rotation_sigma_deg, rng)
            if candidate is None:
                continue
            box = _swept_box(candidate[0], size)
            if allow_overlap or not any(_boxes_overlap(box, other) for other in taken):
                placed = candidate
                break
        if placed is None:
            raise PlacementError(
                f"could not place cell {idx} after {max_attempts} attempts "
                f"(scene {H}x{W}, {len(taken)} cells already placed)")
        taken.append(_swept_box(placed[0], size))
        placements.append(CellPlacement(label=idx + 1, origins=placed[0], angles=placed[1]))

    bg_mean, bg_std = background
    bg_rng = rng_for(rng_seed, "background")
    frames_u16, masks_u16 = [], []
    for f in range(num_frames):
        canvas = bg_mean + bg_std * bg_rng.standard_normal((H, W))
        labels = np.zeros((H, W), dtype=np.uint16)
        for video, placement in zip(videos, placements):
            size = video.size
            angle = float(placement.angles[f])
            texture = ndimage.rotate(video.frames[f], angle, reshape=False,
                                     order=1, mode="nearest")
            mask = ndimage.rotate(video.masks[f], angle, reshape=False,
                                  order=0, mode="constant", cval=0)
            alpha = np.minimum(ndimage.distance_transform_edt(mask > 0), 2.0) / 2.0
            r0, c0 = placement.origins[f]
            window = np.s_[r0:r0 + size, c0:c0 + size]
            canvas[window] = alpha * texture + (1.0 - alpha) * canvas[window]
            region = labels[window]
            region[mask > 0] = placement.label
        frames_u16.append(stats.to_raw(np.clip(canvas, -1.0, 1.0)))
        masks_u16.append(labels)

    lineage = tuple(ctc.TrackRecord(label=p.label, begin=0, end=num_frames - 1, parent=0)
                    for p in placements)
    recording = ctc.SceneRecording(frames=tuple(frames_u16), masks=tuple(masks_u16),
                                   lineage=lineage)
    return ComposedScene(recording=recording, placements=tuple(placements))


def run_generation(cfg: GenerationConfig, stochastic: bool = True) -> list:
    """End-to-end `generate`: checkpoints -> cell videos -> scenes -> CTC trees.

    Returns the written sequence directories; appends a manifest record (with
    timings and the denoiser evaluation counter) at the output root.
    """
    t_start = time.perf_counter()
    ddpm, schedule, norm, _ = load_denoiser(cfg.ddpm)
    fpm, _, _ = load_flow(cfg.fpm)
    model = shapes.load_model(cfg.shape_model)
    if not (cfg.t_next == 0 or cfg.t_next <= cfg.t_first <= schedule.T):
        raise ConfigError([
            f"t_first, t_next: require 1 <= t_next <= t_first <= T={schedule.T} "
            f"(or t_next = 0), got t_first={cfg.t_first}, t_next={cfg.t_next}"])
    if cfg.t_first > schedule.T:
        raise ConfigError([f"t_first: exceeds schedule length T={schedule.T}"])

    out_root = Path(cfg.output)
    sequence_dirs = []
    timings = {"load_checkpoints": time.perf_counter() - t_start}
    evals_before = ddpm.eval_count
    t_gen = time.perf_counter()
    for s in range(cfg.num_sequences):
        videos = []
        for c in range(cfg.num_cells):
            trajectory = shapes.sample_trajectory(
                model, cfg.num_frames, smoothness=cfg.smoothness,
                rng_seed=derive_int_seed(cfg.seed, "trajectory", s, c),
                anchor_spacing=cfg.anchor_spacing)
            videos.append(generate_cell_video(
                trajectory, model, ddpm, schedule, fpm, cfg.t_first, cfg.t_next,
                derive_int_seed(cfg.seed, "video", s, c), size=cfg.crop_size,
                stochastic=stochastic))
        scene = compose_scene(
            videos, (cfg.scene_height, cfg.scene_width),
            rng_seed=derive_int_seed(cfg.seed, "scene", s),
            motion_sigma=cfg.motion_sigma, rotation_sigma_deg=cfg.rotation_sigma_deg,
            background=(model.background_mean, model.background_std), stats=norm,
            allow_overlap=cfg.overlap == "allow")
        seq_dir = out_root / f"{s + 1:02d}"
        ctc.write_scene(scene.recording, seq_dir)
        sequence_dirs.append(seq_dir)
    timings["generate"] = time.perf_counter() - t_gen

    record = manifest.new_record(
        "generate",
        config={k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        seeds={"master": cfg.seed},
        checkpoints={"ddpm": cfg.ddpm, "fpm": cfg.fpm, "shape_model": cfg.shape_model},
        timings=timings,
        counters={"denoiser_evals": ddpm.eval_count - evals_before},
    )
    manifest.append_record(out_root, record)
    return sequence_dirs
