"""Intensity normalization between raw 16-bit counts and the [-1, 1] domain.

The mapping is percentile-based (0.1 / 99.9 by default) so a handful of hot
pixels cannot compress the usable range; the constants travel with every
checkpoint and run manifest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NormalizationStats:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"degenerate normalization range [{self.lo}, {self.hi}]")

    @classmethod
    def from_images(cls, images, lo_pct: float = 0.1, hi_pct: float = 99.9) -> "NormalizationStats":
        values = np.concatenate([np.asarray(im, dtype=np.float64).ravel() for im in images])
        lo, hi = np.percentile(values, [lo_pct, hi_pct])
        if hi <= lo:
            hi = lo + 1.0
        return cls(float(lo), float(hi))

    def to_normalized(self, raw) -> np.ndarray:
        x = (np.asarray(raw, dtype=np.float64) - self.lo) / (self.hi - self.lo)
        return np.clip(2.0 * x - 1.0, -1.0, 1.0)

    def to_raw(self, normalized) -> np.ndarray:
        x = (np.asarray(normalized, dtype=np.float64) + 1.0) / 2.0
        raw = self.lo + x * (self.hi - self.lo)
        return np.clip(np.rint(raw), 0, 65535).astype(np.uint16)

    def as_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(float(d["lo"]), float(d["hi"]))


FULL_RANGE = NormalizationStats(0.0, 65535.0)
