"""Condition image assembly and per-point feature projection.

The condition image concatenates an intensity channel, the binary building
mask, and the Sobel edge map (plus optional externally computed feature
grids). At every reverse-diffusion step the partially denoised cloud is
rasterized into the camera view and each visible point reads the feature
vector at its projected pixel; occluded, culled, or out-of-frame points get a
constant fill vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, Intrinsics, _splat
from .geometry import as_cloud

CHANNEL_INTENSITY = "intensity"
CHANNEL_MASK = "mask"
CHANNEL_SOBEL = "sobel"
CHANNEL_EXTERNAL = "external"


@dataclass
class FeatureImage:
    """H x W x C condition grid plus the role of each channel."""

    grid: np.ndarray          # (H, W, C) float64
    channels: tuple[str, ...]

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3:
            raise ValueError("feature grid must be (H, W, C)")
        if self.grid.shape[2] != len(self.channels):
            raise ValueError("channel map length must match grid depth")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("feature grid contains non-finite values")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def num_channels(self) -> int:
        return self.grid.shape[2]


def build_condition_image(intensity: np.ndarray, mask: np.ndarray,
                          edges: np.ndarray,
                          external: np.ndarray | None = None) -> FeatureImage:
    """Stack [intensity, mask, sobel, external...] into one condition image."""
    intensity = np.asarray(intensity, dtype=np.float64)
    mask = np.asarray(mask)
    edges = np.asarray(edges, dtype=np.float64)
    if intensity.ndim != 2:
        raise ValueError("intensity must be a 2D grayscale image")
    if mask.shape != intensity.shape or edges.shape != intensity.shape:
        raise ValueError("intensity, mask, and edge maps must share H x W")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be strictly binary")

    layers = [intensity, mask.astype(np.float64), edges]
    names = [CHANNEL_INTENSITY, CHANNEL_MASK, CHANNEL_SOBEL]
    if external is not None:
        external = np.asarray(external, dtype=np.float64)
        if external.ndim == 2:
            external = external[:, :, None]
        if external.ndim != 3 or external.shape[:2] != intensity.shape:
            raise ValueError("external feature grid must be H x W x C")
        layers.extend(external[:, :, c] for c in range(external.shape[2]))
        names.extend([CHANNEL_EXTERNAL] * external.shape[2])
    return FeatureImage(np.stack(layers, axis=-1), tuple(names))


def project_features(x_t: np.ndarray, pose: CameraPose, k: Intrinsics,
                     fi: FeatureImage, fill: float = 0.0,
                     splat_radius: float = 1.0) -> np.ndarray:
    """Assign each point the feature vector at its projected pixel.

    Visibility comes from the z-buffer: a point is visible when it owns at
    least one rasterized pixel and its rounded projection lies inside the
    image. Every other point receives ``fill`` in all channels. Rows of the
    result are therefore either an exact pixel vector from ``fi`` or the
    exact fill vector; there is no interpolation.
    """
    x_t = as_cloud(x_t)
    if (fi.height, fi.width) != (k.height, k.width):
        raise ValueError("feature image size must match camera intrinsics")
    n = len(x_t)
    out = np.full((n, fi.num_channels), float(fill))

    depth, owner, front_idx, pu, pv = _splat(x_t, pose, k, splat_radius)
    owners = owner[owner >= 0]
    if owners.size == 0:
        return out
    visible = np.zeros(n, dtype=bool)
    visible[np.unique(owners)] = True

    in_frame = (pu >= 0) & (pu < k.width) & (pv >= 0) & (pv < k.height)
    sel = visible[front_idx] & in_frame
    out[front_idx[sel]] = fi.grid[pv[sel], pu[sel], :]
    return out
