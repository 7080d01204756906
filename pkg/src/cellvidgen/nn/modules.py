"""Network building blocks: conv/linear layers and the encoder-decoder U-Net.

One U-Net class serves both trainable models in the package; the texture
denoiser instantiates it with a timestep embedding, the registration model
without one and with a zero-initialized head (so the untrained model is the
identity transform).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Tiny parameter container; submodules are discovered via attributes."""

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for value in self.__dict__.values():
            if isinstance(value, Tensor) and value.requires_grad:
                params.append(value)
            elif isinstance(value, Module):
                params.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        params.extend(item.parameters())
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_state_arrays(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.data.shape:
                raise ValueError(f"shape mismatch: {a.shape} vs {p.data.shape}")
            p.data = a.copy()


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((out_ch, in_ch, kernel, kernel))
        else:
            std = np.sqrt(2.0 / (in_ch * kernel * kernel))
            w = rng.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        std = np.sqrt(2.0 / in_dim)
        self.weight = Tensor(rng.normal(0.0, std, size=(in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps t (shape (B,)) into (B, dim)."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class ConvBlock(Module):
    """conv -> act (+ timestep bias) -> conv -> act"""

    def __init__(self, in_ch: int, out_ch: int, rng, time_dim: int = 0, activation: str = "silu"):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng)
        self.time_proj = Linear(time_dim, out_ch, rng) if time_dim else None
        self._act = T.silu if activation == "silu" else T.leaky_relu

    def __call__(self, x: Tensor, temb: Tensor | None = None) -> Tensor:
        h = self._act(self.conv1(x))
        if self.time_proj is not None and temb is not None:
            bias = self.time_proj(temb)  # (B, out_ch)
            h = T.add(h, T.reshape(bias, (bias.shape[0], bias.shape[1], 1, 1)))
        return self._act(self.conv2(h))


class UNet(Module):
    """Encoder-decoder with skip connections on (B,C,H,W) float64 arrays.

    ``levels`` counts resolutions, so the input height/width must be
    divisible by 2**(levels-1). Widths double per level, capped at 8x base.
    """

    def __init__(self, in_ch: int, out_ch: int, base_width: int = 32, levels: int = 4,
                 time_dim: int = 0, activation: str = "silu", zero_head: bool = True,
                 seed: int = 0):
        rng = np.random.Generator(np.random.Philox(seed))
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.base_width = base_width
        self.levels = levels
        self.time_dim = time_dim
        self.activation = activation
        widths = [min(base_width * 2 ** i, base_width * 8) for i in range(levels)]
        self.widths = widths

        if time_dim:
            self.time_mlp1 = Linear(time_dim, time_dim, rng)
            self.time_mlp2 = Linear(time_dim, time_dim, rng)
        else:
            self.time_mlp1 = None
            self.time_mlp2 = None

        self.down_blocks = []
        ch = in_ch
        for i in range(levels - 1):
            self.down_blocks.append(ConvBlock(ch, widths[i], rng, time_dim, activation))
            ch = widths[i]
        self.bottleneck = ConvBlock(ch, widths[-1], rng, time_dim, activation)
        self.up_blocks = []
        ch = widths[-1]
        for i in reversed(range(levels - 1)):
            self.up_blocks.append(ConvBlock(ch + widths[i], widths[i], rng, time_dim, activation))
            ch = widths[i]
        self.head = Conv2d(ch, out_ch, 3, rng, zero_init=zero_head)

    def config(self) -> dict:
        return {
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "base_width": self.base_width,
            "levels": self.levels,
            "time_dim": self.time_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "UNet":
        return cls(zero_head=True, seed=0, **cfg)

    def _embed(self, t: np.ndarray) -> Tensor | None:
        if not self.time_dim:
            return None
        emb = Tensor(timestep_embedding(t, self.time_dim))
        return self.time_mlp2(T.silu(self.time_mlp1(emb)))

    def __call__(self, x: Tensor, t: np.ndarray | None = None) -> Tensor:
        div = 2 ** (self.levels - 1)
        if x.shape[2] % div or x.shape[3] % div:
            raise ValueError(f"spatial size {x.shape[2:]} not divisible by {div}")
        temb = self._embed(t) if t is not None else None
        skips = []
        h = x
        for block in self.down_blocks:
            h = block(h, temb)
            skips.append(h)
            h = T.avg_pool2(h)
        h = self.bottleneck(h, temb)
        for block, skip in zip(self.up_blocks, reversed(skips)):
            h = T.upsample_nearest2(h)
            h = T.concat_channels(h, skip)
            h = block(h, temb)
        return self.head(h)
