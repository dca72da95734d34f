"""Synthetic G-buffers and environment maps for tests, demos and benchmarks."""

from __future__ import annotations

import numpy as np

from .envmap import uv_to_dir
from .imagery import GBuffer, intrinsics_matrix


def _fill(value, shape, nch):
    value = np.asarray(value, dtype=np.float64)
    if nch == 3:
        return np.broadcast_to(value, shape + (3,)).copy() if value.ndim <= 1 else value.copy()
    return np.broadcast_to(value, shape).copy()


def sphere_normals(height: int, width: int, max_tilt_deg: float = 75.0) -> np.ndarray:
    """Normals of a bulge facing the camera; tilt grows linearly with radius up to ``max_tilt_deg``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    px = (xs + 0.5) / width * 2.0 - 1.0
    py = 1.0 - (ys + 0.5) / height * 2.0
    r = np.hypot(px, py)
    tilt = np.minimum(r / np.sqrt(2.0), 1.0) * np.radians(max_tilt_deg)
    phi = np.arctan2(py, px)
    n = np.stack([np.sin(tilt) * np.cos(phi), np.sin(tilt) * np.sin(phi), np.cos(tilt)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def orthographic_intrinsics(height: int, width: int, focal_scale: float = 20.0) -> np.ndarray:
    """Long-focal-length pinhole: view directions stay within a few degrees of +z."""
    f = focal_scale * max(height, width)
    return intrinsics_matrix(f, f, width / 2.0, height / 2.0)


def sphere_gbuffer(height: int = 32, width: int | None = None, albedo=0.5, roughness=0.5, metallic=0.0,
                   max_tilt_deg: float = 75.0, depth: float = 2.0, focal_scale: float = 20.0) -> GBuffer:
    width = width or height
    shape = (height, width)
    return GBuffer(
        albedo=_fill(albedo, shape, 3),
        roughness=_fill(roughness, shape, 1),
        metallic=_fill(metallic, shape, 1),
        normal=sphere_normals(height, width, max_tilt_deg),
        depth=np.full(shape, float(depth)),
        intrinsics=orthographic_intrinsics(height, width, focal_scale),
    )


def plane_gbuffer(height: int = 16, width: int | None = None, albedo=0.5, roughness=0.5, metallic=0.0,
                  depth: float = 1.0, K=None) -> GBuffer:
    """Fronto-parallel plane at constant depth, normals toward the camera."""
    width = width or height
    shape = (height, width)
    if K is None:
        K = intrinsics_matrix(width, width, width / 2.0, height / 2.0)
    normal = np.zeros(shape + (3,))
    normal[..., 2] = 1.0
    return GBuffer(
        albedo=_fill(albedo, shape, 3),
        roughness=_fill(roughness, shape, 1),
        metallic=_fill(metallic, shape, 1),
        normal=normal,
        depth=np.full(shape, float(depth)),
        intrinsics=K,
    )


def smooth_random_env(height: int = 16, width: int | None = None, seed: int = 0, lobes: int = 4,
                      base: float = 0.3, peak: float = 1.5) -> np.ndarray:
    """Smooth positive HDR radiance: a coloured floor plus a few wide spherical Gaussians."""
    width = width or 2 * height
    rng = np.random.default_rng(seed)
    v = (np.arange(height) + 0.5) / height
    u = (np.arange(width) + 0.5) / width
    d = uv_to_dir(u[None, :], v[:, None])
    out = np.broadcast_to(base * rng.uniform(0.5, 1.0, 3), (height, width, 3)).copy()
    for _ in range(lobes):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        sharpness = rng.uniform(1.5, 4.0)
        colour = peak * rng.uniform(0.3, 1.0, 3)
        out += colour * np.exp(sharpness * (d @ axis - 1.0))[..., None]
    return out


def random_env(height: int = 4, width: int | None = None, seed: int = 0, low: float = 0.1, high: float = 2.0) -> np.ndarray:
    width = width or 2 * height
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, size=(height, width, 3))
