"""Synthetic test volumes: spheres with analytic ground-truth masks."""

from __future__ import annotations

import numpy as np

from .volume import VolumeGrid


def sphere_mask(dims: tuple[int, int, int], radius_frac: float = 0.3) -> VolumeGrid:
    """Binary ball centered in the grid; radius as a fraction of min(dims)."""
    nx, ny, nz = dims
    radius = radius_frac * min(dims)
    z, y, x = np.ogrid[:nz, :ny, :nx]
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0
    dist2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
    return VolumeGrid((dist2 <= radius**2).astype(np.uint8))


def sphere_volume(
    dims: tuple[int, int, int] = (64, 64, 64),
    radius_frac: float = 0.3,
    noise_sigma: float = 0.05,
    seed: int = 0,
) -> VolumeGrid:
    """Bright ball (intensity 1) on dark background (0) plus Gaussian noise."""
    mask = sphere_mask(dims, radius_frac)
    rng = np.random.default_rng(seed)
    data = mask.data.astype(np.float32)
    data += rng.normal(0.0, noise_sigma, size=data.shape).astype(np.float32)
    return VolumeGrid(data, mask.spacing_mm, mask.origin_mm)
