"""Fréchet distance between Gaussian moment summaries of embedding sets."""

from __future__ import annotations

import numpy as np

from ..errors import EmbedderError
from .embed import EmbeddingSet


def gaussian_moments(embeddings: EmbeddingSet):
    """(mean, covariance) of an embedding set; covariance uses N-1 scaling."""
    x = embeddings.vectors
    if x.shape[0] < 2:
        raise EmbedderError(f"need >= 2 vectors for covariance, got {x.shape[0]}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (x.shape[0] - 1)
    return mu, cov


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition, clipping noise at 0."""
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    sqrt_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(sqrt_a @ cov_b @ sqrt_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2·(Σ_a Σ_b)^½) over the two sets."""
    if a.dim != b.dim:
        raise EmbedderError(f"embedding dimensions differ: {a.dim} vs {b.dim}")
    mu_a, cov_a = gaussian_moments(a)
    mu_b, cov_b = gaussian_moments(b)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)
