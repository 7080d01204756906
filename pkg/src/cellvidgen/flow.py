"""Dense displacement prediction between consecutive masks, plus the warper.

An unsupervised registration network maps a channel-concatenated
(source, target) pair to a per-pixel displacement field; training minimizes
the photometric mismatch after warping plus a smoothness penalty on the
field. The flow convention is output(p) = input(p + flow(p)) with bilinear
sampling and border clamping.
"""

from __future__ import annotations

import numpy as np

from . import archive
from .errors import CheckpointError
from .kernels import warp_forward
from .nn import Adam, Tensor, UNet, no_grad, ops
from .training import LossMonitor, TrainingResult

CHECKPOINT_FORMAT = "cellvidgen-flow-v1"


def warp(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Warp a single (H,W) image by a (2,H,W) displacement field (pixels).

    Channel 0 displaces columns (x), channel 1 rows (y): the output value at
    pixel p is the input sampled bilinearly at p + flow(p); samples falling
    outside the raster clamp to the border value.
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    flow = np.ascontiguousarray(flow, dtype=np.float64)
    if image.ndim != 2 or flow.shape != (2,) + image.shape:
        raise ValueError(f"image {image.shape} and flow {flow.shape} are not congruent")
    return warp_forward(image[None, None], flow[None])[0, 0]


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    """Render a binary mask into the normalized domain: background -1, foreground +1."""
    return (np.asarray(mask) > 0).astype(np.float64) * 2.0 - 1.0


def smoothness_penalty(flow: np.ndarray) -> float:
    """Mean squared forward difference of both flow channels along both axes.

    The two axis means (each over both channels) are averaged, so a unit
    ramp in one channel along one axis scores 1/4.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim == 3:
        flow = flow[None]
    if flow.ndim != 4 or flow.shape[1] != 2:
        raise ValueError(f"expected (2,H,W) or (B,2,H,W) flow, got {flow.shape}")
    dx = flow[:, :, :, 1:] - flow[:, :, :, :-1]
    dy = flow[:, :, 1:, :] - flow[:, :, :-1, :]
    return float(((dx ** 2).mean() + (dy ** 2).mean()) / 2.0)


def _smoothness_t(flow: Tensor) -> Tensor:
    dx = flow[:, :, :, 1:] - flow[:, :, :, :-1]
    dy = flow[:, :, 1:, :] - flow[:, :, :-1, :]
    half = 0.5
    return ops.add(ops.mul(ops.mean(ops.square(dx)), half),
                   ops.mul(ops.mean(ops.square(dy)), half))


class FlowRegistrar:
    """Registration network: (source, target) image pair -> displacement field.

    The prediction head is zero-initialized, so before any training the
    model outputs the identity transform.
    """

    def __init__(self, unet: UNet):
        if unet.in_ch != 2 or unet.out_ch != 2:
            raise ValueError("flow network expects 2 input and 2 output channels")
        self.unet = unet
        self.eval_count = 0

    def predict_batch(self, src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        """Displacement fields for (B,H,W) source/target image batches."""
        if src.shape != tgt.shape:
            raise ValueError(f"source {src.shape} and target {tgt.shape} differ")
        self.eval_count += 1
        stacked = np.stack([src, tgt], axis=1).astype(np.float64)
        with no_grad():
            return self.unet(Tensor(stacked)).data

    @property
    def num_parameters(self) -> int:
        return self.unet.num_parameters()


def predict_flow(net: FlowRegistrar, src_mask: np.ndarray, tgt_mask: np.ndarray) -> np.ndarray:
    """Flow field aligning src to tgt, from binary masks. Returns (2,H,W)."""
    src = np.asarray(src_mask)
    tgt = np.asarray(tgt_mask)
    if src.shape != tgt.shape or src.ndim != 2:
        raise ValueError(f"mask shapes {src.shape} and {tgt.shape} are not congruent")
    fields = net.predict_batch(mask_to_image(src)[None], mask_to_image(tgt)[None])
    return fields[0]


def fpm_loss(net: FlowRegistrar, src_imgs: np.ndarray, tgt_imgs: np.ndarray,
             lambda_smooth: float) -> Tensor:
    """Training objective: warped-source MSE against target + smoothness term."""
    stacked = np.stack([src_imgs, tgt_imgs], axis=1).astype(np.float64)
    flow = net.unet(Tensor(stacked))
    warped = ops.warp(Tensor(src_imgs[:, None]), flow)
    data_term = ops.mse(warped, Tensor(tgt_imgs[:, None]))
    return ops.add(data_term, ops.mul(_smoothness_t(flow), lambda_smooth))


def _coerce_pairs(pairs):
    srcs, tgts = [], []
    for a, b in pairs:
        srcs.append(np.asarray(getattr(a, "mask", a)))
        tgts.append(np.asarray(getattr(b, "mask", b)))
    if not srcs:
        raise ValueError("empty pair stream")
    return np.stack([mask_to_image(m) for m in srcs]), np.stack([mask_to_image(m) for m in tgts])


def train_fpm(pairs, net: FlowRegistrar, batch_size: int, lr: float, iters: int,
              lambda_smooth: float, rng_seed: int) -> TrainingResult:
    """Train the registration network on consecutive mask pairs."""
    config = {"batch_size": batch_size, "lr": lr, "iters": iters,
              "lambda_smooth": lambda_smooth, "seed": rng_seed}
    if iters == 0:
        return TrainingResult(np.empty(0), config, False)
    src_all, tgt_all = _coerce_pairs(pairs)
    rng = np.random.Generator(np.random.Philox(int(rng_seed)))
    opt = Adam(net.unet.parameters(), lr=lr)
    monitor = LossMonitor(iters, "fpm training")
    for it in range(iters):
        idx = rng.integers(0, src_all.shape[0], size=batch_size)
        loss = fpm_loss(net, src_all[idx], tgt_all[idx], lambda_smooth)
        opt.zero_grad()
        loss.backward()
        opt.step()
        monitor.record(it, loss.data.item())
    return TrainingResult(monitor.losses, config, monitor.diverged)


def save_flow(path, net: FlowRegistrar, lambda_smooth: float, manifest: dict | None = None) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "unet": net.unet.config(),
        "lambda_smooth": lambda_smooth,
        "manifest": manifest or {},
    }
    arrays = {f"param_{i:04d}": arr for i, arr in enumerate(net.unet.state_arrays())}
    arrays["meta"] = archive.json_array(meta)
    archive.save_npz(path, **arrays)


def load_flow(path):
    """Load a checkpoint; returns (FlowRegistrar, lambda_smooth, manifest)."""
    try:
        data = archive.load_npz(path)
        meta = archive.array_json(data["meta"])
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unexpected checkpoint format {meta.get('format')!r}")
    unet = UNet.from_config(meta["unet"])
    params = [data[k] for k in sorted(data) if k.startswith("param_")]
    unet.load_state_arrays(params)
    return FlowRegistrar(unet), float(meta["lambda_smooth"]), meta.get("manifest", {})
