"""Statistical shape-and-brightness model over radial cell contours.

Each training cell is summarized by the distance from its centroid to the
contour along K equally spaced rays (non-star-convex cells take the radial
maximum). Principal-component analysis of those radial profiles gives a
low-dimensional sampling space; temporally smooth mask sequences come from
anchor parameter vectors drawn every few frames and blended with a Gaussian
kernel along the time axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import archive
from .errors import CheckpointError, DescriptorError, RenderError, ShapeFitError

MODEL_FORMAT = "cellvidgen-shape-v1"

DEFAULT_NUM_ANGLES = 64
DEFAULT_ANCHOR_SPACING = 8
DEFAULT_SMOOTHNESS = 3.0


@dataclass(frozen=True)
class ContourDescriptor:
    """Radial contour profile plus area and mean foreground brightness."""

    radii: np.ndarray  # (K,) pixels, all > 0
    area: float        # pixels^2
    brightness: float  # normalized intensity in [-1, 1]


@dataclass(frozen=True)
class ShapeModel:
    mean_radii: np.ndarray       # (K,)
    modes: np.ndarray            # (K, M) orthonormal columns
    sigmas: np.ndarray           # (M,) non-increasing
    explained_variance: np.ndarray  # (M,) fractions, sum <= 1
    mean_area: float
    brightness_mean: float
    brightness_std: float
    background_mean: float
    background_std: float

    @property
    def num_angles(self) -> int:
        return int(self.mean_radii.size)

    @property
    def num_modes(self) -> int:
        return int(self.sigmas.size)


@dataclass(frozen=True)
class ShapeTrajectory:
    """Per-frame latent path behind a synthetic mask sequence."""

    params: np.ndarray       # (num_frames, M), clamped to +-3 sigma
    brightness: np.ndarray   # (num_frames,)
    offsets: np.ndarray      # (num_frames, 2) centroid drift, pixels

    @property
    def num_frames(self) -> int:
        return int(self.params.shape[0])


def extract_descriptor(image: np.ndarray, mask: np.ndarray,
                       num_angles: int = DEFAULT_NUM_ANGLES) -> ContourDescriptor:
    """Measure one cell: radial profile about the centroid, area, brightness.

    ``image`` is in the normalized domain, ``mask`` binary. Rays march
    outward in 0.25 px steps; the radius per ray is the largest distance at
    which the ray still hits foreground.
    """
    mask = np.asarray(mask) > 0
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise DescriptorError("empty mask")
    cy, cx = ys.mean(), xs.mean()
    r_max = float(np.hypot(ys - cy, xs - cx).max()) + 2.0
    radii_grid = np.arange(0.0, r_max + 0.25, 0.25)
    theta = 2.0 * np.pi * np.arange(num_angles) / num_angles
    py = np.rint(cy + radii_grid[None, :] * np.sin(theta)[:, None]).astype(np.int64)
    px = np.rint(cx + radii_grid[None, :] * np.cos(theta)[:, None]).astype(np.int64)
    inside = ((py >= 0) & (py < mask.shape[0]) & (px >= 0) & (px < mask.shape[1]))
    hit = np.zeros_like(inside)
    hit[inside] = mask[py[inside], px[inside]]
    if not hit.any(axis=1).all():
        raise DescriptorError("a ray from the centroid never hits foreground")
    last_hit = hit.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
    radii = radii_grid[last_hit]
    radii = np.maximum(radii, 0.5)  # centroid pixel itself counts as extent
    img = np.asarray(image, dtype=np.float64)
    return ContourDescriptor(radii=radii, area=float(mask.sum()),
                             brightness=float(img[mask].mean()))


def fit(descriptors, variance_keep: float = 0.95,
        background_values=None) -> ShapeModel:
    """Principal-component fit of the mean-centered radial profiles.

    Modes covering at least ``variance_keep`` of the variance are retained
    (pass 1.0 to keep the full basis). ``background_values`` feeds the
    background intensity statistics used for scene composition and guidance;
    without samples a dim default near the bottom of the normalized range
    is used.
    """
    descriptors = list(descriptors)
    if len(descriptors) < 2:
        raise ShapeFitError(f"need at least 2 descriptors, got {len(descriptors)}")
    K = descriptors[0].radii.size
    if any(d.radii.size != K for d in descriptors):
        raise ShapeFitError("descriptors disagree on the number of contour angles")
    X = np.stack([np.asarray(d.radii, dtype=np.float64) for d in descriptors])
    mean = X.mean(axis=0)
    Xc = X - mean
    scale = max(float(np.abs(X).max()), 1.0)
    if np.abs(Xc).max() < 1e-12 * scale:
        raise ShapeFitError("all descriptors are identical (zero variance)")
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    sigmas = svals / np.sqrt(len(descriptors) - 1)
    keep = sigmas > 1e-12 * max(sigmas[0], 1.0)
    sigmas = sigmas[keep]
    modes = vt[keep].T
    # Fix mode signs so fitting is deterministic across BLAS implementations.
    for m in range(modes.shape[1]):
        pivot = np.argmax(np.abs(modes[:, m]))
        if modes[pivot, m] < 0:
            modes[:, m] = -modes[:, m]
    frac = sigmas ** 2 / (sigmas ** 2).sum()
    if variance_keep < 1.0:
        n_keep = int(np.searchsorted(np.cumsum(frac), variance_keep) + 1)
        n_keep = min(max(n_keep, 1), sigmas.size)
        modes, sigmas, frac = modes[:, :n_keep], sigmas[:n_keep], frac[:n_keep]
    bright = np.array([d.brightness for d in descriptors])
    if background_values is not None and len(np.atleast_1d(background_values)) > 0:
        bg = np.asarray(background_values, dtype=np.float64)
        bg_mean, bg_std = float(bg.mean()), float(bg.std())
    else:
        bg_mean, bg_std = -0.9, 0.02
    return ShapeModel(
        mean_radii=mean,
        modes=np.ascontiguousarray(modes),
        sigmas=sigmas,
        explained_variance=frac,
        mean_area=float(np.mean([d.area for d in descriptors])),
        brightness_mean=float(bright.mean()),
        brightness_std=float(bright.std()),
        background_mean=bg_mean,
        background_std=bg_std,
    )


def reconstruct_radii(model: ShapeModel, b: np.ndarray) -> np.ndarray:
    """Radial profile implied by parameter vector b (no clamping)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (model.num_modes,):
        raise ValueError(f"expected {model.num_modes} parameters, got shape {b.shape}")
    return model.mean_radii + model.modes @ b


def project_descriptor(model: ShapeModel, descriptor: ContourDescriptor) -> np.ndarray:
    """Parameter vector of a descriptor under the model's basis."""
    return model.modes.T @ (np.asarray(descriptor.radii, dtype=np.float64) - model.mean_radii)


def clamp_params(model: ShapeModel, b: np.ndarray) -> np.ndarray:
    lim = 3.0 * model.sigmas
    return np.clip(b, -lim, lim)


def _gaussian_blend(signal: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian-kernel smoothing along axis 0 with boundary renormalization."""
    n = signal.shape[0]
    f = np.arange(n, dtype=np.float64)
    w = np.exp(-((f[:, None] - f[None, :]) ** 2) / (2.0 * bandwidth ** 2))
    w /= w.sum(axis=1, keepdims=True)
    return w @ signal


def sample_trajectory(model: ShapeModel, num_frames: int,
                      smoothness: float = DEFAULT_SMOOTHNESS, rng_seed: int = 0,
                      anchor_spacing: int = DEFAULT_ANCHOR_SPACING) -> ShapeTrajectory:
    """Draw a temporally smooth latent path of ``num_frames`` frames.

    Anchor parameter vectors are sampled independently every
    ``anchor_spacing`` frames from N(0, diag(sigma^2)); the piecewise-constant
    anchor signal is then blended with a Gaussian kernel of the given
    bandwidth (frames), brightness alongside. Deterministic per seed.
    """
    if num_frames < 1:
        raise ValueError(f"num_frames must be >= 1, got {num_frames}")
    if smoothness <= 0.0:
        raise ValueError(f"smoothness must be > 0, got {smoothness}")
    rng = np.random.Generator(np.random.Philox(int(rng_seed)))
    n_anchors = (num_frames - 1) // anchor_spacing + 1
    anchors = rng.normal(0.0, 1.0, size=(n_anchors, model.num_modes)) * model.sigmas
    anchor_bright = rng.normal(model.brightness_mean, model.brightness_std, size=n_anchors)
    idx = np.minimum(np.arange(num_frames) // anchor_spacing, n_anchors - 1)
    params = _gaussian_blend(anchors[idx], smoothness)
    params = clamp_params(model, params)
    brightness = _gaussian_blend(anchor_bright[idx][:, None], smoothness)[:, 0]
    brightness = np.clip(brightness, -1.0, 1.0)
    return ShapeTrajectory(params=params, brightness=brightness,
                           offsets=np.zeros((num_frames, 2)))


def render_mask(model: ShapeModel, b: np.ndarray, size: int) -> np.ndarray:
    """Rasterize the contour implied by parameter vector b onto a size x size grid.

    The contour is centered on the raster center; a pixel is foreground when
    its distance from the center is at most the circularly interpolated
    radius at its angle. Returns a uint16 {0,1} mask.
    """
    radii = reconstruct_radii(model, clamp_params(model, np.asarray(b, dtype=np.float64)))
    if np.any(radii <= 0.0):
        raise RenderError("reconstructed contour has non-positive radii")
    if 2.0 * radii.max() + 2.0 > size:
        raise RenderError(f"contour diameter {2 * radii.max():.1f} does not fit size {size}")
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    dy = (yy - c).astype(np.float64)
    dx = (xx - c).astype(np.float64)
    r = np.hypot(dy, dx)
    theta = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    K = model.num_angles
    pos = theta * K / (2.0 * np.pi)
    k0 = np.floor(pos).astype(np.int64) % K
    k1 = (k0 + 1) % K
    frac = pos - np.floor(pos)
    boundary = radii[k0] * (1.0 - frac) + radii[k1] * frac
    return (r <= boundary).astype(np.uint16)


def save_model(path, model: ShapeModel) -> None:
    meta = {
        "format": MODEL_FORMAT,
        "mean_area": model.mean_area,
        "brightness_mean": model.brightness_mean,
        "brightness_std": model.brightness_std,
        "background_mean": model.background_mean,
        "background_std": model.background_std,
    }
    archive.save_npz(path, mean_radii=model.mean_radii, modes=model.modes,
                     sigmas=model.sigmas, explained_variance=model.explained_variance,
                     meta=archive.json_array(meta))


def load_model(path) -> ShapeModel:
    try:
        data = archive.load_npz(path)
        meta = archive.array_json(data["meta"])
    except Exception as exc:
        raise CheckpointError(f"unreadable shape model {path}: {exc}") from exc
    if meta.get("format") != MODEL_FORMAT:
        raise CheckpointError(f"{path}: unexpected shape model format {meta.get('format')!r}")
    return ShapeModel(
        mean_radii=data["mean_radii"],
        modes=data["modes"],
        sigmas=data["sigmas"],
        explained_variance=data["explained_variance"],
        mean_area=float(meta["mean_area"]),
        brightness_mean=float(meta["brightness_mean"]),
        brightness_std=float(meta["brightness_std"]),
        background_mean=float(meta["background_mean"]),
        background_std=float(meta["background_std"]),
    )
