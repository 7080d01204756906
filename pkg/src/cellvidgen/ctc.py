"""Cell Tracking Challenge-style data trees.

A sequence lives in a directory of raw frames ``t###.tif`` with annotations
in a sibling ``<name>_GT`` (or ``_ST``) tree: tracked label masks under
``TRA/man_track###.tif`` plus the lineage table ``man_track.txt``, or plain
segmentation masks under ``SEG/man_seg###.tif``. All rasters are 16-bit
single-channel TIFFs. The lineage table has one row per track, four
whitespace-separated non-negative integers "label begin end parent" where
parent = 0 means no parent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataTreeError, LineageParseError
from .normalize import NormalizationStats

CROP_SIZE = 96

_RAW_RE = re.compile(r"^t(\d+)\.tif{1,2}$")
_MASK_RE = re.compile(r"^man_(?:track|seg)(\d+)\.tif{1,2}$")


def read_tiff(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.uint16)


def write_tiff(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"expected a 2-D raster, got shape {array.shape}")
    Image.fromarray(array.astype(np.uint16)).save(path, format="TIFF")


@dataclass(frozen=True)
class TrackRecord:
    label: int
    begin: int
    end: int
    parent: int


def parse_lineage(path) -> tuple:
    """Parse a man_track.txt lineage table ("L B E P" rows)."""
    records = []
    seen = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise LineageParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            label, begin, end, parent = (int(p) for p in parts)
        except ValueError as exc:
            raise LineageParseError(f"{path}:{lineno}: non-integer field in {line!r}") from exc
        if min(label, begin, end, parent) < 0:
            raise LineageParseError(f"{path}:{lineno}: negative value in {line!r}")
        if label == 0:
            raise LineageParseError(f"{path}:{lineno}: track label 0 is reserved for background")
        if begin > end:
            raise LineageParseError(f"{path}:{lineno}: begin {begin} > end {end}")
        if label in seen:
            raise LineageParseError(f"{path}:{lineno}: duplicate track label {label}")
        seen.add(label)
        records.append(TrackRecord(label, begin, end, parent))
    return tuple(records)


@dataclass(frozen=True)
class SequenceTree:
    """Scanned layout of one sequence: file references, no pixel data."""

    root: Path
    frame_count: int
    raw_paths: tuple
    mask_paths: tuple
    lineage: tuple  # of TrackRecord, empty when no lineage table exists

    def load_raw(self, frame: int) -> np.ndarray:
        return read_tiff(self.raw_paths[frame])

    def load_mask(self, frame: int) -> np.ndarray:
        return read_tiff(self.mask_paths[frame])


def _indexed_files(directory: Path, pattern) -> dict:
    found = {}
    for entry in directory.iterdir():
        m = pattern.match(entry.name)
        if m:
            found[int(m.group(1))] = entry
    return found


def scan_sequence(root) -> SequenceTree:
    """Scan ``root`` (a sequence directory) and its annotation sibling."""
    root = Path(root)
    if not root.is_dir():
        raise DataTreeError(f"sequence directory does not exist: {root}")
    raws = _indexed_files(root, _RAW_RE)
    if not raws:
        raise DataTreeError(f"no raw frames (t###.tif) found in {root}")

    ann_dir = None
    for suffix in ("_GT", "_ST"):
        candidate = root.parent / (root.name + suffix)
        if candidate.is_dir():
            ann_dir = candidate
            break
    if ann_dir is None:
        raise DataTreeError(f"no annotation tree ({root.name}_GT or _ST) beside {root}")

    masks: dict = {}
    lineage: tuple = ()
    tra = ann_dir / "TRA"
    seg = ann_dir / "SEG"
    if tra.is_dir():
        masks = _indexed_files(tra, _MASK_RE)
        track_file = tra / "man_track.txt"
        if track_file.is_file():
            lineage = parse_lineage(track_file)
    if not masks and seg.is_dir():
        masks = _indexed_files(seg, _MASK_RE)
    if not masks:
        raise DataTreeError(f"no annotation masks found under {ann_dir}")

    if set(raws) != set(masks):
        missing = sorted(set(raws) ^ set(masks))
        raise DataTreeError(
            f"raw and annotation frame sets disagree in {root}; mismatched indices {missing[:10]}")
    indices = sorted(raws)
    if indices != list(range(len(indices))):
        raise DataTreeError(f"frame indices not contiguous from 0 in {root}: {indices[:10]}...")
    return SequenceTree(
        root=root,
        frame_count=len(indices),
        raw_paths=tuple(raws[i] for i in indices),
        mask_paths=tuple(masks[i] for i in indices),
        lineage=lineage,
    )


@dataclass(frozen=True)
class CellCrop:
    """One centered cell: normalized image patch plus its binary mask."""

    image: np.ndarray  # (size, size) float64 in [-1, 1]
    mask: np.ndarray   # (size, size) uint16, values {0, 1}
    frame: int
    track_id: int
    offset: tuple      # (row, col) of the crop origin in scene coordinates


@dataclass(frozen=True)
class ExtractResult:
    crops: tuple
    skipped: int
    stats: NormalizationStats


def _crop_window(plane: np.ndarray, r0: int, c0: int, size: int, fill: float) -> np.ndarray:
    """Cut a size x size window at (r0, c0), padding out-of-scene area with fill."""
    out = np.full((size, size), fill, dtype=np.float64)
    h, w = plane.shape
    rs, cs = max(r0, 0), max(c0, 0)
    re_, ce = min(r0 + size, h), min(c0 + size, w)
    if rs < re_ and cs < ce:
        out[rs - r0:re_ - r0, cs - c0:ce - c0] = plane[rs:re_, cs:ce]
    return out


def _label_geometry(mask: np.ndarray, label: int):
    """(centroid row/col, bbox, single_component, touches_border) for one label."""
    sel = mask == label
    ys, xs = np.nonzero(sel)
    _, n_comp = ndimage.label(sel)
    touches = (ys.min() == 0 or xs.min() == 0
               or ys.max() == mask.shape[0] - 1 or xs.max() == mask.shape[1] - 1)
    bbox = (ys.min(), ys.max(), xs.min(), xs.max())
    return (ys.mean(), xs.mean()), bbox, n_comp == 1, touches


def _fits(bbox, r0: int, c0: int, size: int) -> bool:
    y0, y1, x0, x1 = bbox
    return y0 >= r0 and x0 >= c0 and y1 < r0 + size and x1 < c0 + size


def compute_stats(tree: SequenceTree) -> NormalizationStats:
    return NormalizationStats.from_images([tree.load_raw(f) for f in range(tree.frame_count)])


def extract_crops(tree: SequenceTree, size: int = CROP_SIZE,
                  stats: NormalizationStats = None) -> ExtractResult:
    """One centered crop per (frame, label) occurrence that fits.

    Cells are skipped (and counted) when they touch the scene border, have a
    bounding box that does not fit the centered window, or are not a single
    connected component. Out-of-scene window area is padded with the frame's
    background median.
    """
    if size % 2 != 0:
        raise ValueError(f"crop size must be even, got {size}")
    if stats is None:
        stats = compute_stats(tree)
    crops = []
    skipped = 0
    for f in range(tree.frame_count):
        mask = tree.load_mask(f)
        labels = [int(v) for v in np.unique(mask) if v != 0]
        if not labels:
            continue
        image = stats.to_normalized(tree.load_raw(f))
        bg = float(np.median(image[mask == 0])) if (mask == 0).any() else float(np.median(image))
        for label in labels:
            (cy, cx), bbox, single, touches = _label_geometry(mask, label)
            r0 = int(round(cy)) - size // 2
            c0 = int(round(cx)) - size // 2
            if touches or not single or not _fits(bbox, r0, c0, size):
                skipped += 1
                continue
            crops.append(CellCrop(
                image=_crop_window(image, r0, c0, size, bg),
                mask=_crop_window((mask == label).astype(np.float64), r0, c0, size, 0.0).astype(np.uint16),
                frame=f,
                track_id=label,
                offset=(r0, c0),
            ))
    return ExtractResult(crops=tuple(crops), skipped=skipped, stats=stats)


def consecutive_mask_pairs(tree: SequenceTree, size: int = CROP_SIZE,
                           stats: NormalizationStats = None) -> list:
    """(crop_f, crop_f+1) pairs of the same track in a SHARED window.

    Both crops are cut around the frame-f centroid, so the second mask shows
    the cell's true motion inside the window. Pairs are dropped when either
    mask fails the extract_crops fit rules within that shared window.
    """
    if size % 2 != 0:
        raise ValueError(f"crop size must be even, got {size}")
    if stats is None:
        stats = compute_stats(tree)
    pairs = []
    prev_mask = tree.load_mask(0) if tree.frame_count else None
    for f in range(tree.frame_count - 1):
        cur_mask, next_mask = prev_mask, tree.load_mask(f + 1)
        prev_mask = next_mask
        shared = sorted(set(np.unique(cur_mask)) & set(np.unique(next_mask)) - {0})
        if not shared:
            continue
        cur_img = stats.to_normalized(tree.load_raw(f))
        next_img = stats.to_normalized(tree.load_raw(f + 1))
        bg_cur = float(np.median(cur_img[cur_mask == 0])) if (cur_mask == 0).any() else 0.0
        bg_next = float(np.median(next_img[next_mask == 0])) if (next_mask == 0).any() else 0.0
        for label in shared:
            label = int(label)
            (cy, cx), bbox_a, single_a, touch_a = _label_geometry(cur_mask, label)
            _, bbox_b, single_b, touch_b = _label_geometry(next_mask, label)
            r0 = int(round(cy)) - size // 2
            c0 = int(round(cx)) - size // 2
            if (touch_a or touch_b or not single_a or not single_b
                    or not _fits(bbox_a, r0, c0, size) or not _fits(bbox_b, r0, c0, size)):
                continue
            make = lambda img, msk, fr, bg: CellCrop(
                image=_crop_window(img, r0, c0, size, bg),
                mask=_crop_window((msk == label).astype(np.float64), r0, c0, size, 0.0).astype(np.uint16),
                frame=fr, track_id=label, offset=(r0, c0))
            pairs.append((make(cur_img, cur_mask, f, bg_cur),
                          make(next_img, next_mask, f + 1, bg_next)))
    return pairs


DATASET_FORMAT = "cellvidgen-dataset-v1"


def save_dataset(path, result: ExtractResult, pairs) -> None:
    """Persist extracted crops + mask pairs as one training archive."""
    from . import archive  # local import: archive knows nothing about trees

    crops = result.crops
    arrays = {
        "images": np.stack([c.image for c in crops]) if crops else np.empty((0, 0, 0)),
        "masks": np.stack([c.mask for c in crops]) if crops else np.empty((0, 0, 0), np.uint16),
        "frames": np.array([c.frame for c in crops], dtype=np.int64),
        "track_ids": np.array([c.track_id for c in crops], dtype=np.int64),
        "pair_src": np.stack([a.mask for a, _ in pairs]) if pairs else np.empty((0, 0, 0), np.uint16),
        "pair_tgt": np.stack([b.mask for _, b in pairs]) if pairs else np.empty((0, 0, 0), np.uint16),
        "meta": archive.json_array({
            "format": DATASET_FORMAT,
            "normalization": result.stats.as_dict(),
            "skipped": result.skipped,
        }),
    }
    archive.save_npz(path, **arrays)


def load_dataset(path):
    """(images, masks, pair_src, pair_tgt, stats, meta) from a training archive."""
    from . import archive

    from .errors import CheckpointError
    try:
        data = archive.load_npz(path)
        meta = archive.array_json(data["meta"])
    except Exception as exc:
        raise CheckpointError(f"unreadable dataset archive {path}: {exc}") from exc
    if meta.get("format") != DATASET_FORMAT:
        raise CheckpointError(f"{path}: unexpected dataset format {meta.get('format')!r}")
    stats = NormalizationStats.from_dict(meta["normalization"])
    return (data["images"], data["masks"], data["pair_src"], data["pair_tgt"], stats, meta)


@dataclass(frozen=True)
class SceneRecording:
    """Composed multi-cell video ready to be written as a CTC tree."""

    frames: tuple   # uint16 (H, W) rasters
    masks: tuple    # uint16 (H, W) label rasters
    lineage: tuple  # of TrackRecord

    def validate(self) -> None:
        if len(self.frames) == 0:
            raise DataTreeError("recording has no frames")
        if len(self.frames) != len(self.masks):
            raise DataTreeError(
                f"frame/mask count mismatch: {len(self.frames)} vs {len(self.masks)}")
        shape = np.asarray(self.frames[0]).shape
        for f, (img, msk) in enumerate(zip(self.frames, self.masks)):
            if np.asarray(img).shape != shape or np.asarray(msk).shape != shape:
                raise DataTreeError(f"frame {f}: raster shapes disagree")
        spans = {rec.label: rec for rec in self.lineage}
        if len(spans) != len(self.lineage):
            raise DataTreeError("duplicate labels in lineage table")
        seen_in_span = {rec.label: False for rec in self.lineage}
        for f, msk in enumerate(self.masks):
            for label in (int(v) for v in np.unique(msk) if v != 0):
                rec = spans.get(label)
                if rec is None:
                    raise DataTreeError(f"frame {f}: label {label} missing from lineage table")
                if not rec.begin <= f <= rec.end:
                    raise DataTreeError(
                        f"frame {f}: label {label} appears outside its lineage span "
                        f"[{rec.begin}, {rec.end}]")
                seen_in_span[label] = True
        for rec in self.lineage:
            if not seen_in_span[rec.label]:
                raise DataTreeError(f"track {rec.label} never appears within its span")
            if rec.end >= len(self.masks):
                raise DataTreeError(f"track {rec.label} span exceeds frame count")
            if rec.parent != 0:
                parent = spans.get(rec.parent)
                if parent is None:
                    raise DataTreeError(f"track {rec.label}: unknown parent {rec.parent}")
                if parent.end >= rec.begin:
                    raise DataTreeError(
                        f"track {rec.label}: parent {rec.parent} still alive at its begin frame")


def _frame_name(prefix: str, index: int, count: int) -> str:
    return f"{prefix}{index:0{max(3, len(str(max(count - 1, 0))))}d}.tif"


def write_scene(recording: SceneRecording, root) -> None:
    """Write raw frames, tracked masks, and lineage in CTC layout at ``root``.

    ``root`` is the sequence directory (e.g. ``out/01``); annotations go to
    the ``<name>_GT`` sibling with identical masks under TRA and SEG.
    """
    recording.validate()
    root = Path(root)
    gt = root.parent / (root.name + "_GT")
    tra, seg = gt / "TRA", gt / "SEG"
    for d in (root, tra, seg):
        d.mkdir(parents=True, exist_ok=True)
    n = len(recording.frames)
    try:
        for f in range(n):
            write_tiff(root / _frame_name("t", f, n), recording.frames[f])
            write_tiff(tra / _frame_name("man_track", f, n), recording.masks[f])
            write_tiff(seg / _frame_name("man_seg", f, n), recording.masks[f])
        lines = [f"{r.label} {r.begin} {r.end} {r.parent}\n"
                 for r in sorted(recording.lineage, key=lambda r: r.label)]
        (tra / "man_track.txt").write_text("".join(lines))
    except OSError as exc:
        raise DataTreeError(f"failed writing scene under {root}: {exc}") from exc
