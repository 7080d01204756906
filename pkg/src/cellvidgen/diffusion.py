"""Gaussian noising schedule, truncated denoising sampler, and trainer.

The generative core: images are corrupted by the closed-form noising jump
x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps and recovered by an ancestral
reverse chain driven by a trained noise-prediction U-Net. At synthesis time
the chain is deliberately started from a partially noised mask image
(t_start well below T) so the mask's shape information survives while the
texture is replaced with a learned one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import archive
from .errors import CheckpointError
from .nn import Adam, Tensor, UNet, no_grad, ops
from .normalize import NormalizationStats
from .training import LossMonitor, TrainingResult

CHECKPOINT_FORMAT = "cellvidgen-denoiser-v1"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise magnitudes beta_t and their cumulative products.

    Arrays are indexed 0..T-1 for steps t = 1..T; use ``alpha_bar(t)`` and
    friends for 1-based access.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta_t must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int):
        if not 1 <= t <= self.T:
            raise ValueError(f"step t={t} outside 1..{self.T}")


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule over T steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form jump to step t: sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} does not match image shape {x0.shape}")
    schedule._check_t(t)
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


class Denoiser:
    """Noise-prediction network plus an evaluation counter.

    The counter increments once per reverse step (one network evaluation),
    which is the quantity the runtime of video generation scales with.
    """

    def __init__(self, unet: UNet):
        if unet.in_ch != 1 or unet.out_ch != 1:
            raise ValueError("denoiser expects a single-channel U-Net")
        self.unet = unet
        self.eval_count = 0

    def predict(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Predicted noise for a (B,1,H,W) batch at integer steps t (B,)."""
        self.eval_count += 1
        with no_grad():
            return self.unet(Tensor(x), np.asarray(t)).data

    @property
    def num_parameters(self) -> int:
        return self.unet.num_parameters()


def sample_from(x_start: np.ndarray, t_start: int, net: Denoiser, schedule: NoiseSchedule,
                rng: np.random.Generator | int, stochastic: bool = True) -> np.ndarray:
    """Run the reverse chain from t_start down to 1 on a single (H,W) image.

    Each step computes (x - (1-alpha_t)/sqrt(1-abar_t) * eps_hat)/sqrt(alpha_t)
    and, for t > 1, adds sqrt(beta_t) * z with fresh standard normal z.
    ``stochastic=False`` suppresses the injected noise so closed-form oracles
    apply; sampling is deterministic given the generator state either way.
    """
    schedule._check_t(t_start)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    x = np.asarray(x_start, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {x.shape}")
    for t in range(t_start, 0, -1):
        eps_hat = net.predict(x[None, None], np.array([t]))[0, 0]
        alpha = schedule.alpha(t)
        abar = schedule.alpha_bar(t)
        x = (x - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            z = rng.standard_normal(x.shape)
            if stochastic:
                x = x + np.sqrt(schedule.beta(t)) * z
    return x


def diffuse_then_denoise(image: np.ndarray, t_steps: int, net: Denoiser, schedule: NoiseSchedule,
                         rng: np.random.Generator | int, stochastic: bool = True) -> np.ndarray:
    """Noise an image up to t_steps with the closed-form jump, then denoise back.

    ``t_steps=0`` is the pass-through case (no network evaluations).
    """
    if t_steps == 0:
        return np.asarray(image, dtype=np.float64).copy()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    image = np.asarray(image, dtype=np.float64)
    eps = rng.standard_normal(image.shape) if stochastic else np.zeros_like(image)
    noisy = forward_diffuse(image, t_steps, eps, schedule)
    return sample_from(noisy, t_steps, net, schedule, rng, stochastic=stochastic)


def guidance_image(mask: np.ndarray, brightness: float, bg_level: float) -> np.ndarray:
    """Render a label mask into the [-1,1] domain: foreground brightness over background."""
    brightness = float(np.clip(brightness, -1.0, 1.0))
    bg_level = float(np.clip(bg_level, -1.0, 1.0))
    if brightness == bg_level:
        raise ValueError("foreground and background levels must differ")
    return np.where(np.asarray(mask) > 0, brightness, bg_level).astype(np.float64)


def guided_generate(mask: np.ndarray, brightness: float, t_steps: int, net: Denoiser,
                    schedule: NoiseSchedule, rng: np.random.Generator | int,
                    bg_level: float = -0.9, stochastic: bool = True) -> np.ndarray:
    """Texture a synthetic mask by a truncated noising/denoising round trip."""
    guide = guidance_image(mask, brightness, bg_level)
    return diffuse_then_denoise(guide, t_steps, net, schedule, rng, stochastic=stochastic)


def _coerce_images(crops) -> np.ndarray:
    images = []
    for crop in crops:
        images.append(np.asarray(getattr(crop, "image", crop), dtype=np.float64))
    if not images:
        raise ValueError("empty crop stream")
    stack = np.stack(images)
    if stack.min() < -1.0 - 1e-9 or stack.max() > 1.0 + 1e-9:
        raise ValueError("crops must be normalized to [-1, 1]")
    return stack


def train_ddpm(crops, net: Denoiser, schedule: NoiseSchedule, batch_size: int, lr: float,
               iters: int, rng_seed: int) -> TrainingResult:
    """Train the noise predictor: MSE between true and predicted noise at uniform t.

    The loss curve is recorded every iteration. A divergence warning fires
    when the 100-iteration moving average exceeds its initial value after
    the first 10% of iterations.
    """
    config = {"batch_size": batch_size, "lr": lr, "iters": iters, "seed": rng_seed}
    if iters == 0:
        return TrainingResult(np.empty(0), config, False)
    images = _coerce_images(crops)
    rng = np.random.Generator(np.random.Philox(int(rng_seed)))
    opt = Adam(net.unet.parameters(), lr=lr)
    monitor = LossMonitor(iters, "ddpm training")
    for it in range(iters):
        idx = rng.integers(0, images.shape[0], size=batch_size)
        batch = images[idx][:, None]
        t = rng.integers(1, schedule.T + 1, size=batch_size)
        eps = rng.standard_normal(batch.shape)
        abar = schedule.alpha_bars[t - 1][:, None, None, None]
        xt = np.sqrt(abar) * batch + np.sqrt(1.0 - abar) * eps
        pred = net.unet(Tensor(xt), t)
        loss = ops.mse(pred, Tensor(eps))
        opt.zero_grad()
        loss.backward()
        opt.step()
        monitor.record(it, loss.data.item())
    return TrainingResult(monitor.losses, config, monitor.diverged)


def save_denoiser(path, net: Denoiser, schedule: NoiseSchedule, norm: NormalizationStats,
                  manifest: dict | None = None) -> None:
    """Write a self-contained checkpoint: parameters, schedule, normalization, manifest."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "unet": net.unet.config(),
        "normalization": norm.as_dict(),
        "manifest": manifest or {},
    }
    arrays = {f"param_{i:04d}": arr for i, arr in enumerate(net.unet.state_arrays())}
    arrays["betas"] = schedule.betas
    arrays["meta"] = archive.json_array(meta)
    archive.save_npz(path, **arrays)


def load_denoiser(path):
    """Load a checkpoint; returns (Denoiser, NoiseSchedule, NormalizationStats, manifest)."""
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
    net = Denoiser(unet)
    schedule = NoiseSchedule(data["betas"])
    norm = NormalizationStats.from_dict(meta["normalization"])
    return net, schedule, norm, meta.get("manifest", {})
