"""Per-pixel Monte Carlo evaluation of the no-visibility rendering integral.

    I(x) = integral over the hemisphere at N(x) of M(w) * E(w) * (w . N(x)) dw

Light and cosine-weighted hemisphere samples are combined with the balance
heuristic. Each pixel draws from its own hashed stream, so images do not
depend on tiling or thread count.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .envmap import EnvironmentMap, pdf_light, sample_light, sample_radiance
from .errors import DegenerateEnvironmentError, ValidationError
from .imagery import GBuffer
from .sampling import cosine_hemisphere, pixel_keys, sample_2d
from .shading import MODES, brdf_eval, disney_diffuse_unit, ggx_specular_f0

SAMPLERS = ("mis", "env_only", "cosine_only")
# bounds per-tile memory: tile_pixels * samples stays near this many directions
_TILE_BUDGET = 1 << 17
_ENV_STREAM = 1
_COS_STREAM = 2


@dataclass(frozen=True)
class RenderSettings:
    spp: int = 256
    mode: str = "disney"
    sampler: str = "mis"
    seed: int = 0
    exposure: float = 1.0
    stratified: bool = True

    def __post_init__(self):
        if int(self.spp) < 1:
            raise ValidationError("spp must be >= 1")
        if not self.exposure > 0:
            raise ValidationError("exposure must be > 0")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.sampler not in SAMPLERS:
            raise ValidationError(f"sampler must be one of {SAMPLERS}")


@dataclass
class LightSamples:
    """Sample directions and their estimator weights for a set of pixels.

    ``weights`` already folds in radiance, the cosine term, the MIS weight,
    the pdf and ``1/spp``, so a pixel's value is ``sum_s brdf(dirs_s) * weights_s``.
    Neither depends on the material, which lets optimisers reuse them.
    """

    dirs: np.ndarray      # (P, S, 3)
    weights: np.ndarray   # (P, S, 3)


def light_samples(normals, keys, env: EnvironmentMap, settings: RenderSettings) -> LightSamples:
    normals = np.asarray(normals, dtype=np.float64)
    n_pix = normals.shape[0]
    spp = int(settings.spp)
    sampler = settings.sampler
    if env.degenerate:
        if sampler == "env_only":
            raise DegenerateEnvironmentError("environment map is black and cosine fallback is disabled")
        sampler = "cosine_only"

    parts_d, parts_w = [], []
    if sampler in ("mis", "env_only"):
        u1, u2 = sample_2d(keys, spp, _ENV_STREAM, settings.stratified)
        d, _, pe = sample_light(env, u1, u2)
        cos = np.einsum("psk,pk->ps", d, normals)
        if sampler == "mis":
            denom = pe + np.maximum(cos, 0.0) / np.pi
        else:
            denom = pe
        scale = np.where(cos > 0, cos / (denom * spp), 0.0)
        parts_d.append(d)
        parts_w.append(sample_radiance(env, d) * scale[..., None])
    if sampler in ("mis", "cosine_only"):
        u1, u2 = sample_2d(keys, spp, _COS_STREAM, settings.stratified)
        d = cosine_hemisphere(normals, u1, u2)
        cos = np.einsum("psk,pk->ps", d, normals)
        pc = np.maximum(cos, 0.0) / np.pi
        if sampler == "mis":
            denom = pdf_light(env, d) + pc
        else:
            denom = pc
        scale = np.where(cos > 0, cos / (np.where(denom > 0, denom, 1.0) * spp), 0.0)
        parts_d.append(d)
        parts_w.append(sample_radiance(env, d) * scale[..., None])
    dirs = np.concatenate(parts_d, axis=1) if len(parts_d) > 1 else parts_d[0]
    weights = np.concatenate(parts_w, axis=1) if len(parts_w) > 1 else parts_w[0]
    assert dirs.shape[:2] == (n_pix, weights.shape[1])
    return LightSamples(dirs, weights)


def shade_samples(samples: LightSamples, albedo, roughness, metallic, normals, views, mode: str = "disney"):
    """Integrate the material response against precomputed light samples. Returns ``(P, 3)``."""
    n = np.asarray(normals)[:, None, :]
    v = np.asarray(views)[:, None, :]
    f = brdf_eval(
        None, n, samples.dirs, v, mode,
        albedo=np.asarray(albedo)[:, None, :],
        roughness=np.asarray(roughness)[:, None],
        metallic=np.asarray(metallic)[:, None],
    )
    return np.sum(f * samples.weights, axis=1)


def shade_components(samples: LightSamples, f0, roughness, metallic, normals, views, mode: str = "disney"):
    """Split a pixel's value into ``albedo * diffuse + specular`` for a fixed ``F0``.

    Returns ``(diffuse, specular)``, both ``(P, 3)``; the rendered value for
    albedo ``A`` is ``A * diffuse + specular``.
    """
    n = np.asarray(normals)[:, None, :]
    v = np.asarray(views)[:, None, :]
    if mode == "lambert":
        nl = np.einsum("psk,pqk->ps", samples.dirs, n)
        nv = np.einsum("pqk,pqk->pq", v, n)
        unit = np.where((nl > 0) & (nv > 0), 1.0 / np.pi, 0.0)
        diffuse = np.sum(unit[..., None] * samples.weights, axis=1)
        return diffuse, np.zeros_like(diffuse)
    r = np.asarray(roughness)[:, None]
    m = np.asarray(metallic)
    unit = (1.0 - m)[:, None] * disney_diffuse_unit(r, n, samples.dirs, v)
    diffuse = np.sum(unit[..., None] * samples.weights, axis=1)
    spec = ggx_specular_f0(np.asarray(f0)[:, None, :], r, n, samples.dirs, v)
    return diffuse, np.sum(spec * samples.weights, axis=1)


def _tile_size(settings: RenderSettings) -> int:
    per_pixel = 2 * int(settings.spp)
    return max(1, _TILE_BUDGET // per_pixel)


def _shade_pixels(albedo, roughness, metallic, normals, views, keys, env, settings):
    samples = light_samples(normals, keys, env, settings)
    out = shade_samples(samples, albedo, roughness, metallic, normals, views, settings.mode)
    return out * settings.exposure


def shade_points(albedo, roughness, metallic, normals, views, xs, ys, env: EnvironmentMap,
                 settings: RenderSettings, threads: int | None = None):
    """Shade an arbitrary list of surface points; ``(xs, ys)`` seed each point's stream."""
    keys = pixel_keys(settings.seed, np.asarray(xs), np.asarray(ys))
    total = len(keys)
    out = np.zeros((total, 3))
    if total == 0:
        return out
    tile = _tile_size(settings)
    starts = list(range(0, total, tile))

    def run(s):
        sl = slice(s, min(s + tile, total))
        out[sl] = _shade_pixels(albedo[sl], roughness[sl], metallic[sl], normals[sl], views[sl], keys[sl], env, settings)

    workers = resolve_threads(threads)
    if workers == 1 or len(starts) == 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    return out


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def _flat(gbuf: GBuffer):
    h, w = gbuf.shape
    ys, xs = np.mgrid[0:h, 0:w]
    return (
        gbuf.albedo.reshape(-1, 3),
        gbuf.roughness.reshape(-1),
        gbuf.metallic.reshape(-1),
        gbuf.normal.reshape(-1, 3),
        gbuf.view_dirs().reshape(-1, 3),
        xs.reshape(-1),
        ys.reshape(-1),
    )


def shade_pixel(gbuf: GBuffer, x: int, y: int, env: EnvironmentMap, settings: RenderSettings,
                seed_offset: int = 0) -> np.ndarray:
    """Estimate one pixel's outgoing radiance. Equal to the matching :func:`relight_frame` pixel."""
    h, w = gbuf.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ValidationError(f"pixel ({x}, {y}) outside {w}x{h} image")
    if seed_offset:
        settings = dataclasses.replace(settings, seed=(settings.seed + seed_offset) % (1 << 64))
    view = gbuf.view_dirs()[y, x]
    keys = pixel_keys(settings.seed, np.array([x]), np.array([y]))
    out = _shade_pixels(
        gbuf.albedo[y, x][None], gbuf.roughness[y, x][None], gbuf.metallic[y, x][None],
        gbuf.normal[y, x][None], view[None], keys, env, settings,
    )
    return out[0]


def relight_frame(gbuf: GBuffer, env: EnvironmentMap, settings: RenderSettings | None = None,
                  threads: int | None = None) -> np.ndarray:
    """Render the whole G-buffer under ``env``; returns an ``(H, W, 3)`` linear HDR image."""
    settings = settings or RenderSettings()
    albedo, rough, metal, normals, views, xs, ys = _flat(gbuf)
    out = shade_points(albedo, rough, metal, normals, views, xs, ys, env, settings, threads)
    return out.reshape(gbuf.height, gbuf.width, 3)


def frame_samples(gbuf: GBuffer, env: EnvironmentMap, settings: RenderSettings) -> LightSamples:
    """Light samples for every pixel of ``gbuf`` (row-major), e.g. for repeated shading."""
    _, _, _, normals, _, xs, ys = _flat(gbuf)
    keys = pixel_keys(settings.seed, xs, ys)
    return light_samples(normals, keys, env, settings)
