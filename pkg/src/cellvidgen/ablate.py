"""Ablation harness over the truncation-step grid (first vs. later frames).

Runs one generation per (t_first, t_next) combination with a shared seed,
scores each scene against its own synthetic ground truth (SEG of a simple
threshold segmenter) and against reference frames (Fréchet distance with
the built-in test embedder), and emits a report as two one-dimensional
slice tables: one varying the first-frame steps, one varying the
later-frame steps.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import ctc, manifest
from .config import GenerationConfig
from .errors import CellVidGenError, ConfigError
from .metrics import embed, frechet_distance, seg_score
from .synthesis import run_generation

T_FIRST_GRID = (100, 200, 400, 600)
T_NEXT_GRID = (0, 10, 30, 50, 200)
ABLATION_EMBEDDER = "downsample-flatten"
MIN_COMPONENT_AREA = 4


@dataclass(frozen=True)
class AblationCell:
    t_first: int
    t_next: int
    status: str            # "ok" | "failed"
    seg: float = float("nan")
    frechet: float = float("nan")
    denoiser_evals: int = 0
    wall_s: float = float("nan")
    error: str = ""


def otsu_threshold(image: np.ndarray, bins: int = 256) -> float:
    """Histogram threshold maximizing between-class variance."""
    img = np.asarray(image, dtype=np.float64).ravel()
    hist, edges = np.histogram(img, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2.0
    w = hist.astype(np.float64)
    w0 = np.cumsum(w)
    w1 = w0[-1] - w0
    m = np.cumsum(w * centers)
    m0 = m / np.maximum(w0, 1e-300)
    m1 = (m[-1] - m) / np.maximum(w1, 1e-300)
    var_between = w0 * w1 * (m0 - m1) ** 2
    return float(centers[int(np.argmax(var_between))])


def segment_frame(image: np.ndarray, min_area: int = MIN_COMPONENT_AREA) -> np.ndarray:
    """Reference segmenter: Otsu threshold + connected components + size filter."""
    mask = np.asarray(image, dtype=np.float64) > otsu_threshold(image)
    labels, n = ndimage.label(mask)
    if n:
        areas = np.bincount(labels.ravel())
        small = np.flatnonzero(areas < min_area)
        labels[np.isin(labels, small[small > 0])] = 0
    return labels.astype(np.uint16)


def _score_tree(seq_dir: Path, reference_embedding):
    tree = ctc.scan_sequence(seq_dir)
    gt_masks = [tree.load_mask(f) for f in range(tree.frame_count)]
    raws = [tree.load_raw(f) for f in range(tree.frame_count)]
    seg = seg_score(gt_masks, [segment_frame(r) for r in raws])
    fd = float("nan")
    if reference_embedding is not None:
        generated = embed([r.astype(np.float64) for r in raws], ABLATION_EMBEDDER,
                          source="synthetic")
        fd = frechet_distance(reference_embedding, generated)
    return seg, fd


def run_ablation(cfg: GenerationConfig, t_first_grid=T_FIRST_GRID,
                 t_next_grid=T_NEXT_GRID, reference_frames=None) -> list:
    """One AblationCell per grid combination; failures are recorded, not raised."""
    reference_embedding = None
    if reference_frames is not None:
        reference_embedding = embed([np.asarray(f, dtype=np.float64) for f in reference_frames],
                                    ABLATION_EMBEDDER, source="real")
    cells = []
    out_root = Path(cfg.output)
    for t_first in t_first_grid:
        for t_next in t_next_grid:
            cell_cfg = dataclasses.replace(
                cfg, t_first=t_first, t_next=t_next, num_sequences=1,
                output=out_root / f"tf{t_first}_tn{t_next}")
            started = time.perf_counter()
            try:
                if not (t_next == 0 or 1 <= t_next <= t_first):
                    raise ConfigError([
                        f"t_next, t_first: require 1 <= t_next <= t_first or t_next = 0, "
                        f"got ({t_first}, {t_next})"])
                seq_dirs = run_generation(cell_cfg)
                wall = time.perf_counter() - started
                records = manifest.read_manifest(cell_cfg.output)
                evals = int(records[-1]["counters"]["denoiser_evals"]) if records else 0
                seg, fd = _score_tree(seq_dirs[0], reference_embedding)
                cells.append(AblationCell(t_first, t_next, "ok", seg=seg, frechet=fd,
                                          denoiser_evals=evals, wall_s=wall))
            except (CellVidGenError, ValueError, OSError) as exc:
                cells.append(AblationCell(t_first, t_next, "failed",
                                          wall_s=time.perf_counter() - started,
                                          error=str(exc)))
    return cells


def _fmt(x, spec=".4f") -> str:
    if isinstance(x, float) and not np.isfinite(x):
        return "-"
    return format(x, spec)


def _table(title: str, label: str, rows) -> list:
    lines = [title, f"{label:>8} | {'SEG':>8} | {'FD':>10} | {'evals':>7} | {'time_s':>8}"]
    lines.append("-" * len(lines[-1]))
    for key, cell in rows:
        if cell is None:
            lines.append(f"{key:>8} | {'(missing)':>8}")
        elif cell.status != "ok":
            lines.append(f"{key:>8} | failed: {cell.error[:60]}")
        else:
            lines.append(f"{key:>8} | {_fmt(cell.seg):>8} | {_fmt(cell.frechet):>10} | "
                         f"{cell.denoiser_evals:>7d} | {_fmt(cell.wall_s, '.2f'):>8}")
    return lines


def format_report(cells, cfg: GenerationConfig,
                  t_first_grid=T_FIRST_GRID, t_next_grid=T_NEXT_GRID) -> str:
    by_key = {(c.t_first, c.t_next): c for c in cells}
    # One-dimensional slices: vary t_first at the configured t_next, and vice versa.
    t_next_fixed = cfg.t_next if cfg.t_next in t_next_grid else t_next_grid[min(1, len(t_next_grid) - 1)]
    t_first_fixed = cfg.t_first if cfg.t_first in t_first_grid else t_first_grid[0]
    lines = []
    lines += _table(f"(a) varying first-frame steps (t_next = {t_next_fixed})", "t_first",
                    [(tf, by_key.get((tf, t_next_fixed))) for tf in t_first_grid])
    lines.append("")
    lines += _table(f"(b) varying later-frame steps (t_first = {t_first_fixed})", "t_next",
                    [(tn, by_key.get((t_first_fixed, tn))) for tn in t_next_grid])
    lines.append("")
    lines.append(f"full grid: {len(cells)} cells "
                 f"({sum(1 for c in cells if c.status == 'ok')} ok, "
                 f"{sum(1 for c in cells if c.status != 'ok')} failed)")
    return "\n".join(lines) + "\n"


def write_report(out_dir, cells, cfg: GenerationConfig,
                 t_first_grid=T_FIRST_GRID, t_next_grid=T_NEXT_GRID):
    """ablation.txt (slice tables) + ablation.csv (full grid)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt = out_dir / "ablation.txt"
    txt.write_text(format_report(cells, cfg, t_first_grid, t_next_grid))
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_first", "t_next", "status", "seg", "frechet",
                         "denoiser_evals", "wall_s", "error"])
        for c in cells:
            writer.writerow([c.t_first, c.t_next, c.status, _fmt(c.seg),
                             _fmt(c.frechet), c.denoiser_evals, _fmt(c.wall_s, ".3f"),
                             c.error])
    return txt, csv_path
