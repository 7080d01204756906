"""Pluggable feature embedders for Fréchet-style distribution distances.

Pretrained Inception/I3D extractors are deliberately out of scope; the
registry boundary lets them plug in by id. The built-ins are cheap pixel
embedders good enough to compare distributions in tests:

- ``downsample-flatten``: per-image 8x8 block mean, flattened (D = 64).
- ``clip-downsample-flatten``: per 4-frame clip, each frame 4x4 block mean,
  concatenated (D = 64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmbedderError


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray  # (N, D)
    source: str          # e.g. "real" / "synthetic"
    embedder_id: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise EmbedderError(f"embeddings must be 2-D (N, D), got shape {v.shape}")
        if not np.isfinite(v).all():
            raise EmbedderError("non-finite values in embeddings")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True)
class Embedder:
    """``fn`` maps one unit (image, or (clip_length, H, W) stack) to a 1-D vector."""

    name: str
    fn: object
    clip_length: int = 0  # 0 = image embedder, > 0 = video embedder

    @property
    def is_video(self) -> bool:
        return self.clip_length > 0


_REGISTRY: dict = {}


def register_embedder(embedder: Embedder) -> None:
    if embedder.name in _REGISTRY:
        raise EmbedderError(f"embedder {embedder.name!r} is already registered")
    _REGISTRY[embedder.name] = embedder


def get_embedder(embedder_id: str) -> Embedder:
    try:
        return _REGISTRY[embedder_id]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY)) or "none"
        raise EmbedderError(f"unknown embedder {embedder_id!r} (registered: {known})") from None


def available_embedders() -> tuple:
    return tuple(sorted(_REGISTRY))


def block_mean_downsample(image: np.ndarray, out: int) -> np.ndarray:
    """Average-pool an (H, W) raster to (out, out); H, W need not divide out."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < out:
        raise EmbedderError(f"image shape {img.shape} too small for {out}x{out} downsample")
    rb = (np.arange(out) * img.shape[0]) // out
    cb = (np.arange(out) * img.shape[1]) // out
    sums = np.add.reduceat(np.add.reduceat(img, rb, axis=0), cb, axis=1)
    counts = np.outer(np.diff(np.append(rb, img.shape[0])),
                      np.diff(np.append(cb, img.shape[1])))
    return sums / counts


def embed(frames, embedder_id: str, source: str = "") -> EmbeddingSet:
    """One vector per frame (image embedders) or per full clip (video embedders)."""
    emb = get_embedder(embedder_id)
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if emb.is_video:
        n_clips = len(frames) // emb.clip_length
        if n_clips == 0:
            raise EmbedderError(
                f"{embedder_id} needs >= {emb.clip_length} frames, got {len(frames)}")
        units = [np.stack(frames[i * emb.clip_length:(i + 1) * emb.clip_length])
                 for i in range(n_clips)]
    else:
        units = frames
    vectors = np.stack([np.ravel(emb.fn(u)) for u in units])
    return EmbeddingSet(vectors=vectors, source=source, embedder_id=embedder_id)


register_embedder(Embedder(
    name="downsample-flatten",
    fn=lambda img: block_mean_downsample(img, 8),
))

register_embedder(Embedder(
    name="clip-downsample-flatten",
    fn=lambda clip: np.concatenate([block_mean_downsample(fr, 4).ravel() for fr in clip]),
    clip_length=4,
))
