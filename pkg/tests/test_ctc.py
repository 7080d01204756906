"""CTC-layout IO: scanning, lineage parsing, crop extraction, scene writing."""

from __future__ import annotations

import numpy as np
import pytest

from cellvidgen import ctc
from cellvidgen.errors import CheckpointError, DataTreeError, LineageParseError
from conftest import build_toy_tree, disc_mask


def test_tiff_roundtrip(tmp_path):
    arr = np.arange(12, dtype=np.uint16).reshape(3, 4) * 1000
    ctc.write_tiff(tmp_path / "t.tif", arr)
    np.testing.assert_array_equal(ctc.read_tiff(tmp_path / "t.tif"), arr)


def test_parse_lineage_example(tmp_path):
    p = tmp_path / "man_track.txt"
    p.write_text("3 0 5 0\n4 2 5 3\n")
    records = ctc.parse_lineage(p)
    assert records[0] == ctc.TrackRecord(label=3, begin=0, end=5, parent=0)
    assert records[1] == ctc.TrackRecord(label=4, begin=2, end=5, parent=3)


@pytest.mark.parametrize("text", [
    "3 0 5",            # wrong field count
    "3 0 x 0",          # non-integer
    "3 -1 5 0",         # negative frame
    "0 0 5 0",          # label zero reserved for background
    "3 5 2 0",          # begin after end
    "3 0 5 0\n3 1 2 0", # duplicate label
])
def test_parse_lineage_rejects(tmp_path, text):
    p = tmp_path / "man_track.txt"
    p.write_text(text + "\n")
    with pytest.raises(LineageParseError):
        ctc.parse_lineage(p)


def test_scan_sequence_reads_tree(toy_tree):
    tree = ctc.scan_sequence(toy_tree)
    assert tree.frame_count == 6
    assert [r.label for r in tree.lineage] == [1, 2]
    assert tree.load_raw(0).dtype == np.uint16
    assert set(np.unique(tree.load_mask(3))) == {0, 1, 2}


def test_scan_missing_root(tmp_path):
    with pytest.raises(DataTreeError):
        ctc.scan_sequence(tmp_path / "nope")


def test_scan_requires_annotations(tmp_path):
    root = tmp_path / "01"
    root.mkdir()
    ctc.write_tiff(root / "t000.tif", np.zeros((8, 8), dtype=np.uint16))
    with pytest.raises(DataTreeError):
        ctc.scan_sequence(root)


def test_scan_rejects_frame_mismatch(tmp_path):
    root = build_toy_tree(tmp_path / "01", frames=3)
    (root.parent / "01_GT" / "TRA" / "man_track002.tif").unlink()
    with pytest.raises(DataTreeError):
        ctc.scan_sequence(root)


def test_scan_rejects_gap_in_frames(tmp_path):
    root = build_toy_tree(tmp_path / "01", frames=4)
    for d, name in ((root, "t001.tif"), (root.parent / "01_GT" / "TRA", "man_track001.tif")):
        (d / name).unlink()
    with pytest.raises(DataTreeError):
        ctc.scan_sequence(root)


def test_scan_falls_back_to_seg_masks(tmp_path):
    root = tmp_path / "02"
    root.mkdir()
    seg = tmp_path / "02_GT" / "SEG"
    seg.mkdir(parents=True)
    for f in range(2):
        ctc.write_tiff(root / f"t{f:03d}.tif", np.full((16, 16), 100, dtype=np.uint16))
        ctc.write_tiff(seg / f"man_seg{f:03d}.tif", disc_mask((16, 16), 8, 8, 3))
    tree = ctc.scan_sequence(root)
    assert tree.frame_count == 2
    assert tree.lineage == ()  # no man_track.txt in a SEG-only tree


def test_compute_stats_spans_data(toy_tree):
    stats = ctc.compute_stats(ctc.scan_sequence(toy_tree))
    assert stats.lo < stats.hi
    assert stats.lo < 500 and stats.hi > 2000


def test_extract_crops_centered_and_complete(toy_tree):
    tree = ctc.scan_sequence(toy_tree)
    result = ctc.extract_crops(tree, size=32)
    assert result.skipped == 0
    assert len(result.crops) == 12  # 6 frames x 2 cells
    for crop in result.crops:
        assert crop.image.shape == (32, 32)
        assert set(np.unique(crop.mask)) <= {0, 1}
        ys, xs = np.nonzero(crop.mask)
        # centered window: centroid within half a pixel of the raster center
        assert abs(ys.mean() - 16) <= 0.5
        assert abs(xs.mean() - 16) <= 0.5
        assert -1.0 <= crop.image.min() and crop.image.max() <= 1.0


def test_extract_crops_area_preserved(toy_tree):
    tree = ctc.scan_sequence(toy_tree)
    result = ctc.extract_crops(tree, size=32)
    for crop in result.crops:
        full = tree.load_mask(crop.frame)
        assert crop.mask.sum() == (full == crop.track_id).sum()


def test_extract_skips_border_touching_cell(tmp_path):
    root = tmp_path / "01"
    root.mkdir()
    tra = tmp_path / "01_GT" / "TRA"
    tra.mkdir(parents=True)
    mask = disc_mask((32, 32), 2, 16, 5)  # pokes out of the top edge
    ctc.write_tiff(root / "t000.tif", np.full((32, 32), 200, dtype=np.uint16))
    ctc.write_tiff(tra / "man_track000.tif", mask)
    (tra / "man_track.txt").write_text("1 0 0 0\n")
    result = ctc.extract_crops(ctc.scan_sequence(root), size=16)
    assert len(result.crops) == 0
    assert result.skipped == 1


def test_extract_skips_fragmented_label(tmp_path):
    root = tmp_path / "01"
    root.mkdir()
    tra = tmp_path / "01_GT" / "TRA"
    tra.mkdir(parents=True)
    mask = disc_mask((48, 48), 16, 16, 4) | disc_mask((48, 48), 32, 32, 4)
    ctc.write_tiff(root / "t000.tif", np.full((48, 48), 200, dtype=np.uint16))
    ctc.write_tiff(tra / "man_track000.tif", mask)
    (tra / "man_track.txt").write_text("1 0 0 0\n")
    result = ctc.extract_crops(ctc.scan_sequence(root), size=16)
    assert result.skipped == 1


def test_extract_pads_with_background_median(tmp_path):
    # cell near (not touching) the left edge: window hangs off-scene
    root = tmp_path / "01"
    root.mkdir()
    tra = tmp_path / "01_GT" / "TRA"
    tra.mkdir(parents=True)
    mask = disc_mask((40, 40), 20, 6, 4)
    raw = np.full((40, 40), 300, dtype=np.uint16)
    raw[mask > 0] = 2000
    ctc.write_tiff(root / "t000.tif", raw)
    ctc.write_tiff(tra / "man_track000.tif", mask)
    (tra / "man_track.txt").write_text("1 0 0 0\n")
    tree = ctc.scan_sequence(root)
    result = ctc.extract_crops(tree, size=24)
    assert len(result.crops) == 1
    crop = result.crops[0]
    assert crop.offset[1] < 0  # window really does hang off the scene
    expected_bg = float(np.median(result.stats.to_normalized(raw)[mask == 0]))
    np.testing.assert_allclose(crop.image[:, 0], expected_bg, atol=1e-12)


def test_extract_rejects_odd_size(toy_tree):
    with pytest.raises(ValueError):
        ctc.extract_crops(ctc.scan_sequence(toy_tree), size=17)


def test_mask_pairs_share_window_and_show_motion(toy_tree):
    tree = ctc.scan_sequence(toy_tree)
    pairs = ctc.consecutive_mask_pairs(tree, size=32)
    assert len(pairs) == 10  # 2 tracks x 5 transitions
    moved = 0
    for a, b in pairs:
        assert a.offset == b.offset  # shared frame-f window
        assert a.frame + 1 == b.frame
        assert a.track_id == b.track_id
        # areas survive the crop untouched
        assert a.mask.sum() == (tree.load_mask(a.frame) == a.track_id).sum()
        assert b.mask.sum() == (tree.load_mask(b.frame) == b.track_id).sum()
        ys_a, xs_a = np.nonzero(a.mask)
        ys_b, xs_b = np.nonzero(b.mask)
        shift = np.hypot(ys_b.mean() - ys_a.mean(), xs_b.mean() - xs_a.mean())
        if shift > 0.5:
            moved += 1
    assert moved == len(pairs)  # toy cells drift every frame


def test_mask_pairs_track_alive_one_frame(tmp_path):
    root = tmp_path / "01"
    root.mkdir()
    tra = tmp_path / "01_GT" / "TRA"
    tra.mkdir(parents=True)
    for f in range(2):
        mask = disc_mask((48, 48), 24, 24, 5) if f == 0 else np.zeros((48, 48), np.uint16)
        ctc.write_tiff(root / f"t{f:03d}.tif", np.full((48, 48), 200, dtype=np.uint16))
        ctc.write_tiff(tra / f"man_track{f:03d}.tif", mask)
    (tra / "man_track.txt").write_text("1 0 0 0\n")
    assert ctc.consecutive_mask_pairs(ctc.scan_sequence(root), size=16) == []


def test_dataset_archive_roundtrip(tmp_path, toy_tree):
    tree = ctc.scan_sequence(toy_tree)
    result = ctc.extract_crops(tree, size=32)
    pairs = ctc.consecutive_mask_pairs(tree, size=32)
    path = tmp_path / "dataset.npz"
    ctc.save_dataset(path, result, pairs)
    images, masks, pair_src, pair_tgt, stats, meta = ctc.load_dataset(path)
    assert images.shape == (12, 32, 32)
    assert pair_src.shape == (10, 32, 32)
    np.testing.assert_array_equal(images[0], result.crops[0].image)
    np.testing.assert_array_equal(pair_tgt[3], pairs[3][1].mask)
    assert stats == result.stats
    assert meta["skipped"] == 0


def test_dataset_rejects_other_format(tmp_path):
    from cellvidgen import archive
    p = tmp_path / "d.npz"
    archive.save_npz(p, meta=archive.json_array({"format": "other"}))
    with pytest.raises(CheckpointError):
        ctc.load_dataset(p)


def _toy_recording():
    """Mother cell (label 1) divides after frame 0 into daughters 2 and 3."""
    frames, masks = [], []
    for f in range(3):
        if f == 0:
            mask = disc_mask((32, 48), 16, 14, 5, label=1)
        else:
            mask = disc_mask((32, 48), 16, 14 + 3 * f, 4, label=2)
            mask |= disc_mask((32, 48), 10, 36, 4, label=3)
        raw = np.full((32, 48), 150, dtype=np.uint16)
        raw[mask > 0] = 900
        frames.append(raw)
        masks.append(mask)
    lineage = (ctc.TrackRecord(1, 0, 0, 0), ctc.TrackRecord(2, 1, 2, 1),
               ctc.TrackRecord(3, 1, 2, 1))
    return ctc.SceneRecording(frames=tuple(frames), masks=tuple(masks), lineage=lineage)


def test_write_scene_roundtrip(tmp_path):
    rec = _toy_recording()
    root = tmp_path / "01"
    ctc.write_scene(rec, root)
    assert (root / "t000.tif").exists()
    assert (root.parent / "01_GT" / "TRA" / "man_track002.tif").exists()
    assert (root.parent / "01_GT" / "SEG" / "man_seg001.tif").exists()
    tree = ctc.scan_sequence(root)
    assert tree.frame_count == 3
    assert tree.lineage == rec.lineage
    for f in range(3):
        np.testing.assert_array_equal(tree.load_mask(f), rec.masks[f])
        np.testing.assert_array_equal(tree.load_raw(f), rec.frames[f])


def test_recording_validation_catches_span_violation():
    rec = _toy_recording()
    bad = ctc.SceneRecording(frames=rec.frames, masks=rec.masks,
                             lineage=(ctc.TrackRecord(1, 0, 0, 0),
                                      ctc.TrackRecord(2, 1, 2, 1),
                                      ctc.TrackRecord(3, 2, 2, 1)))
    with pytest.raises(DataTreeError):
        bad.validate()  # label 3 appears at frame 1, before its declared begin


def test_recording_validation_catches_unknown_parent():
    rec = _toy_recording()
    bad = ctc.SceneRecording(frames=rec.frames, masks=rec.masks,
                             lineage=(ctc.TrackRecord(1, 0, 0, 0),
                                      ctc.TrackRecord(2, 1, 2, 1),
                                      ctc.TrackRecord(3, 1, 2, 7)))
    with pytest.raises(DataTreeError):
        bad.validate()


def test_recording_validation_catches_missing_lineage_row():
    rec = _toy_recording()
    bad = ctc.SceneRecording(frames=rec.frames, masks=rec.masks,
                             lineage=(ctc.TrackRecord(1, 0, 0, 0),
                                      ctc.TrackRecord(2, 1, 2, 1)))
    with pytest.raises(DataTreeError):
        bad.validate()


def test_recording_validation_catches_parent_overlap():
    rec = _toy_recording()
    bad = ctc.SceneRecording(frames=rec.frames, masks=rec.masks,
                             lineage=(ctc.TrackRecord(1, 0, 1, 0),
                                      ctc.TrackRecord(2, 1, 2, 1),
                                      ctc.TrackRecord(3, 1, 2, 1)))
    with pytest.raises(DataTreeError):
        bad.validate()  # parent must vanish before the daughters appear
