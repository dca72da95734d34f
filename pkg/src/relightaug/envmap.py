"""Equirectangular environment maps: lookup and luminance importance sampling.

Directions live in the normal frame (y up). ``u`` wraps horizontally with
``u = 0.5`` looking down -z; ``v = 0`` is the zenith.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEnvironmentError, ValidationError
from .imagery import check_image, luminance


def dir_to_uv(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0.0):
        raise ValidationError("direction must be nonzero")
    d = d / norm[..., None]
    u = np.arctan2(d[..., 0], -d[..., 2]) / (2.0 * np.pi) + 0.5
    u = np.where(u >= 1.0, u - 1.0, u)
    v = np.arccos(np.clip(d[..., 1], -1.0, 1.0)) / np.pi
    return u, v


def uv_to_dir(u, v) -> np.ndarray:
    u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    phi = (u - 0.5) * 2.0 * np.pi
    theta = v * np.pi
    st = np.sin(theta)
    return np.stack([st * np.sin(phi), np.cos(theta), -st * np.cos(phi)], axis=-1)


def texel_solid_angles(height: int, width: int) -> np.ndarray:
    """Exact solid angle of each texel row: ``(2pi/W) (cos theta_top - cos theta_bottom)``."""
    edges = np.cos(np.linspace(0.0, np.pi, height + 1))
    return (2.0 * np.pi / width) * (edges[:-1] - edges[1:])


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    radiance: np.ndarray          # (H, W, 3)
    weights: np.ndarray           # (H, W) luminance * sin(theta_center)
    marginal_cdf: np.ndarray      # (H,) over rows
    conditional_cdf: np.ndarray   # (H, W) per row
    total_weight: float
    degenerate: bool
    texel_pdf: np.ndarray         # (H, W) solid-angle pdf per texel

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    def scaled(self, factor: float) -> EnvironmentMap:
        return build_sampling_tables(self.radiance * factor)


def _normalised_cdf(w, axis=-1):
    c = np.cumsum(w, axis=axis)
    total = np.take(c, [-1], axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(total > 0, c / np.where(total > 0, total, 1.0), 0.0)
    idx = [slice(None)] * c.ndim
    idx[axis] = -1
    c[tuple(idx)] = np.where(np.take(total, 0, axis=axis) > 0, 1.0, 0.0)
    return c


def build_sampling_tables(radiance) -> EnvironmentMap:
    """Build marginal/conditional CDFs over ``luminance * sin(theta)`` texel weights."""
    radiance = check_image(radiance, "environment map")
    if np.any(radiance < 0):
        raise ValidationError("environment map: negative radiance")
    if radiance.ndim == 2:
        radiance = np.repeat(radiance[..., None], 3, axis=2)
    radiance = radiance.copy()
    radiance.flags.writeable = False
    h, w = radiance.shape[:2]
    theta_c = (np.arange(h) + 0.5) / h * np.pi
    weights = luminance(radiance) * np.sin(theta_c)[:, None]
    row_sums = weights.sum(axis=1)
    total = float(row_sums.sum())
    conditional = _normalised_cdf(weights, axis=1)
    marginal = _normalised_cdf(row_sums)
    if total > 0:
        texel_pdf = weights / (total * texel_solid_angles(h, w)[:, None])
    else:
        texel_pdf = np.zeros_like(weights)
    for a in (weights, marginal, conditional, texel_pdf):
        a.flags.writeable = False
    return EnvironmentMap(
        radiance=radiance,
        weights=weights,
        marginal_cdf=marginal,
        conditional_cdf=conditional,
        total_weight=total,
        degenerate=not total > 0,
        texel_pdf=texel_pdf,
    )


def constant_env(rgb, height: int = 16, width: int = 32) -> EnvironmentMap:
    rgb = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (3,))
    return build_sampling_tables(np.broadcast_to(rgb, (height, width, 3)))


def sample_radiance(env: EnvironmentMap, d) -> np.ndarray:
    """Bilinear radiance lookup; wraps in u, clamps in v."""
    u, v = dir_to_uv(d)
    h, w = env.height, env.width
    x = u * w - 0.5
    y = np.clip(v * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64) % w
    x1 = (x0 + 1) % w
    y0 = y0.astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    r = env.radiance
    top = r[y0, x0] * (1.0 - fx) + r[y0, x1] * fx
    bottom = r[y1, x0] * (1.0 - fx) + r[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def texel_index(env: EnvironmentMap, d) -> tuple[np.ndarray, np.ndarray]:
    """Row/column of the texel containing each direction."""
    u, v = dir_to_uv(d)
    col = np.minimum((u * env.width).astype(np.int64), env.width - 1)
    row = np.minimum((v * env.height).astype(np.int64), env.height - 1)
    return row, col


def pdf_light(env: EnvironmentMap, d) -> np.ndarray:
    """Solid-angle density with which :func:`sample_light` produces ``d``."""
    if env.degenerate:
        return np.zeros(np.shape(d)[:-1])
    row, col = texel_index(env, d)
    return env.texel_pdf[row, col]


def _invert(cdf, u):
    """Index of the first CDF entry exceeding ``u`` and the remapped remainder."""
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, cdf.shape[-1] - 1)
    lo = np.where(idx > 0, cdf[np.maximum(idx - 1, 0)], 0.0)
    hi = cdf[idx]
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
    return idx, np.clip(frac, 1e-9, 1.0 - 1e-9)


def sample_light(env: EnvironmentMap, u1, u2):
    """Draw directions proportional to texel weight, uniform in solid angle within a texel.

    Returns ``(dirs, texel_radiance, pdf)`` with the pdf in solid-angle measure.
    """
    if env.degenerate:
        raise DegenerateEnvironmentError("environment map has zero total weight; use cosine sampling")
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    row, fy = _invert(env.marginal_cdf, u1)
    flat = env.conditional_cdf[row]
    # vectorised per-row search: offset each row's CDF into its own interval
    offs = row.astype(np.float64)
    col = np.searchsorted((env.conditional_cdf + np.arange(env.height)[:, None]).ravel(), (u2 + offs).ravel(), side="right")
    col = col.reshape(row.shape) - row * env.width
    col = np.clip(col, 0, env.width - 1)
    # skip zero-weight columns that searchsorted may land on at exact CDF ties
    lo = np.where(col > 0, np.take_along_axis(flat, np.maximum(col - 1, 0)[..., None], -1)[..., 0], 0.0)
    hi = np.take_along_axis(flat, col[..., None], -1)[..., 0]
    fx = np.where(hi > lo, (u2 - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
    fx = np.clip(fx, 1e-9, 1.0 - 1e-9)

    h, w = env.height, env.width
    ct = np.cos(row * np.pi / h)
    cb = np.cos((row + 1) * np.pi / h)
    cos_theta = ct + (cb - ct) * fy
    v = np.arccos(np.clip(cos_theta, -1.0, 1.0)) / np.pi
    # keep the point strictly inside its texel row despite rounding
    v = np.clip(v, (row + 1e-9) / h, (row + 1 - 1e-9) / h)
    u = (col + fx) / w
    dirs = uv_to_dir(u, v)
    return dirs, env.radiance[row, col], env.texel_pdf[row, col]
