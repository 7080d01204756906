"""Shared toy data and session-scoped trained models.

The two trainings here are the expensive part of the suite (a couple of
minutes total); everything that needs a *trained* network reuses them.
Unit tests that only exercise plumbing build their own untrained nets.
"""

from __future__ import annotations

import time
from types import SimpleNamespace

import numpy as np
import pytest

from cellvidgen import ctc, diffusion, flow, shapes
from cellvidgen.nn import UNet
from cellvidgen.normalize import NormalizationStats

TOY_SIZE = 32


def make_blob_crops(n=48, size=TOY_SIZE, seed=0):
    """Procedural bright-ellipse crops in the normalized domain."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    crops = []
    for _ in range(n):
        cy, cx = rng.uniform(size * 0.38, size * 0.62, 2)
        a, b = rng.uniform(4.0, 7.0, 2)
        inside = (((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2) <= 1.0
        img = np.full((size, size), -0.85) + rng.normal(0.0, 0.03, (size, size))
        img[inside] = 0.45 + rng.normal(0.0, 0.08, int(inside.sum()))
        crops.append(np.clip(img, -1.0, 1.0))
    return np.stack(crops)


def make_square_pairs(n=40, size=TOY_SIZE, shift=3, seed=0):
    """Binary square masks where the target is the source shifted +shift columns."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        side = int(rng.integers(8, 13))
        r = int(rng.integers(4, size - side - 4))
        c = int(rng.integers(4, size - side - 4 - shift))
        src = np.zeros((size, size), dtype=np.uint16)
        tgt = np.zeros((size, size), dtype=np.uint16)
        src[r:r + side, c:c + side] = 1
        tgt[r:r + side, c + shift:c + shift + side] = 1
        pairs.append((src, tgt))
    return pairs


def disc_mask(size, cy, cx, radius, label=1):
    yy, xx = np.mgrid[0:size[0], 0:size[1]]
    out = np.zeros(size, dtype=np.uint16)
    out[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = label
    return out


def build_toy_tree(root, frames=6, size=(64, 96), seed=0):
    """Write a small real-looking CTC sequence: two drifting bright discs.

    Returns the sequence root. Cell 1 drifts right, cell 2 down; both stay
    well inside the scene so every crop is extractable.
    """
    rng = np.random.default_rng(seed)
    raw_dir = root
    raw_dir.mkdir(parents=True, exist_ok=True)
    tra = root.parent / f"{root.name}_GT" / "TRA"
    tra.mkdir(parents=True, exist_ok=True)
    for f in range(frames):
        mask = np.zeros(size, dtype=np.uint16)
        mask |= disc_mask(size, 22, 24 + 2 * f, 7, label=1)
        mask |= disc_mask(size, 30 + f, 64, 6, label=2)
        raw = rng.normal(400.0, 12.0, size)
        raw[mask == 1] = rng.normal(3200.0, 80.0, int((mask == 1).sum()))
        raw[mask == 2] = rng.normal(2600.0, 80.0, int((mask == 2).sum()))
        ctc.write_tiff(raw_dir / f"t{f:03d}.tif", np.clip(raw, 0, 65535).astype(np.uint16))
        ctc.write_tiff(tra / f"man_track{f:03d}.tif", mask)
    (tra / "man_track.txt").write_text(f"1 0 {frames - 1} 0\n2 0 {frames - 1} 0\n")
    return root


@pytest.fixture(scope="session")
def blob_crops():
    return make_blob_crops()


@pytest.fixture(scope="session")
def trained_ddpm(blob_crops):
    """DDPM toy training: exactly the acceptance-5 recipe (32x32, 200 iters)."""
    net = diffusion.Denoiser(UNet(1, 1, base_width=8, levels=3, time_dim=16, seed=3))
    schedule = diffusion.build_schedule(1000)
    t0 = time.perf_counter()
    result = diffusion.train_ddpm(blob_crops, net, schedule,
                                  batch_size=8, lr=1e-3, iters=200, rng_seed=42)
    wall_s = time.perf_counter() - t0
    return SimpleNamespace(net=net, schedule=schedule, result=result, wall_s=wall_s)


@pytest.fixture(scope="session")
def trained_fpm():
    """FPM toy training: translating squares, +3 px ground-truth shift."""
    pairs = make_square_pairs()
    net = flow.FlowRegistrar(UNet(2, 2, base_width=8, levels=3, time_dim=0, seed=7))
    t0 = time.perf_counter()
    result = flow.train_fpm(pairs, net, batch_size=8, lr=1e-3, iters=300,
                            lambda_smooth=0.01, rng_seed=11)
    wall_s = time.perf_counter() - t0
    return SimpleNamespace(net=net, result=result, pairs=pairs, wall_s=wall_s,
                           shift=3)


@pytest.fixture(scope="session")
def toy_shape_model():
    """Shape model fitted to rendered ellipses of varying axis ratio."""
    descriptors = []
    size = (TOY_SIZE, TOY_SIZE)
    yy, xx = np.mgrid[0:TOY_SIZE, 0:TOY_SIZE]
    rng = np.random.default_rng(5)
    for i in range(14):
        a = 5.0 + 3.0 * (i / 13.0)
        b = 8.0 - 3.0 * (i / 13.0)
        mask = ((((yy - 16) / a) ** 2 + ((xx - 16) / b) ** 2) <= 1.0).astype(np.uint16)
        img = np.full(size, -0.85)
        img[mask > 0] = 0.4 + 0.1 * rng.standard_normal()
        descriptors.append(shapes.extract_descriptor(img, mask))
    return shapes.fit(descriptors, background_values=[-0.85, -0.84, -0.86])


@pytest.fixture(scope="session")
def toy_checkpoints(tmp_path_factory, trained_ddpm, trained_fpm, toy_shape_model):
    """Trained toy models saved to disk for CLI / pipeline level tests."""
    d = tmp_path_factory.mktemp("toy_ckpt")
    norm = NormalizationStats(380.0, 3400.0)
    diffusion.save_denoiser(d / "ddpm.npz", trained_ddpm.net, trained_ddpm.schedule, norm)
    flow.save_flow(d / "fpm.npz", trained_fpm.net, lambda_smooth=0.01)
    shapes.save_model(d / "shape_model.npz", toy_shape_model)
    return d


@pytest.fixture(scope="session")
def toy_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_data") / "01"
    return build_toy_tree(root)
