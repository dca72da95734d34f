"""Lighting estimation and material refinement by optimisation.

Environment estimation uses the linearity of light transport: a frame is
``sum_j E_j B_j`` for per-texel basis images ``B_j``, so recovering ``E`` is a
ridge-regularised non-negative least-squares problem.

Refinement fits albedo and roughness to an observed frame under a known
environment while a consistency penalty keeps every map near its initial value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .envmap import EnvironmentMap, build_sampling_tables, uv_to_dir
from .errors import DimensionMismatchError, ValidationError
from .imagery import GBuffer, check_image
from .relight import RenderSettings, frame_samples, shade_components
from .shading import brdf_eval, specular_f0

log = logging.getLogger(__name__)

MAX_BASIS_TEXELS = 64 * 32


@dataclass(frozen=True)
class EnvEstimateConfig:
    env_width: int = 32
    env_height: int = 16
    ridge: float = 1e-3
    max_iters: int = 500
    tol: float = 1e-4

    def __post_init__(self):
        if self.env_width < 1 or self.env_height < 1:
            raise ValidationError("environment resolution must be positive")
        if self.ridge < 0:
            raise ValidationError("ridge must be >= 0")
        if self.max_iters < 1 or not self.tol > 0:
            raise ValidationError("max_iters and tol must be positive")


@dataclass(frozen=True)
class RefineConfig:
    delta: float = 0.1
    iterations: int = 200
    step_size: float = 0.05
    spp_inner: int = 64

    def __post_init__(self):
        if self.delta < 0:
            raise ValidationError("delta must be >= 0")
        if self.iterations < 0 or not self.step_size > 0 or self.spp_inner < 1:
            raise ValidationError("iterations, step_size and spp_inner must be positive")


# ---------------------------------------------------------------------------
# transport basis


def texel_quadrature(env_height: int, env_width: int, subsamples: int = 4):
    """Quadrature directions and solid-angle weights, ``(J, s, 3)`` and ``(J, s)``.

    Each texel is split into a ``k x k`` grid in (u, v) (``k*k = subsamples``);
    nodes sit at sub-cell centres and carry the sub-cell's exact solid angle.
    """
    k = int(round(np.sqrt(subsamples)))
    if k * k != subsamples:
        raise ValidationError("subsamples must be a perfect square")
    h, w = env_height, env_width
    offs = (np.arange(k) + 0.5) / k
    rows = np.arange(h)[:, None, None, None]
    cols = np.arange(w)[None, :, None, None]
    v = (rows + offs[None, None, :, None]) / h
    u = (cols + offs[None, None, None, :]) / w
    v, u = np.broadcast_arrays(v, u)
    dirs = uv_to_dir(u, v).reshape(h * w, k * k, 3)
    v_top = (rows + np.arange(k)[None, None, :, None] / k) / h
    v_bot = v_top + 1.0 / (h * k)
    sub_area = (2.0 * np.pi / (w * k)) * (np.cos(np.pi * v_top) - np.cos(np.pi * v_bot))
    weights = np.broadcast_to(sub_area, (h, w, k, k)).reshape(h * w, k * k)
    return dirs, weights


def transport_basis(gbuf: GBuffer, env_res: tuple[int, int] = (32, 16), settings: RenderSettings | None = None,
                    subsamples: int = 4, chunk: int = 64) -> np.ndarray:
    """Per-texel basis images ``B`` of shape ``(H, W, 3, J)``, texels in row-major order.

    ``B[..., j]`` is the frame produced by unit radiance in texel ``j`` alone,
    integrated by deterministic quadrature.
    """
    env_w, env_h = env_res
    if env_w * env_h > MAX_BASIS_TEXELS or env_w > 64 or env_h > 32:
        raise ValidationError(f"environment resolution {env_w}x{env_h} exceeds the 64x32 basis limit")
    mode = (settings or RenderSettings()).mode
    dirs, wts = texel_quadrature(env_h, env_w, subsamples)
    n_tex, n_sub = wts.shape
    flat_dirs = dirs.reshape(-1, 3)
    flat_w = wts.reshape(-1)

    albedo = gbuf.albedo.reshape(-1, 3)
    rough = gbuf.roughness.reshape(-1)
    metal = gbuf.metallic.reshape(-1)
    normals = gbuf.normal.reshape(-1, 3)
    views = gbuf.view_dirs().reshape(-1, 3)
    n_pix = normals.shape[0]
    out = np.empty((n_pix, 3, n_tex))
    for s in range(0, n_pix, chunk):
        sl = slice(s, min(s + chunk, n_pix))
        n = normals[sl][:, None, :]
        f = brdf_eval(
            None, n, flat_dirs[None], views[sl][:, None, :], mode,
            albedo=albedo[sl][:, None, :], roughness=rough[sl][:, None], metallic=metal[sl][:, None],
        )
        cos = np.maximum(np.einsum("pqk,sk->ps", n, flat_dirs), 0.0)
        contrib = f * (cos * flat_w[None])[..., None]
        out[sl] = contrib.reshape(-1, n_tex, n_sub, 3).sum(axis=2).transpose(0, 2, 1)
    return out.reshape(gbuf.height, gbuf.width, 3, n_tex)


# ---------------------------------------------------------------------------
# environment estimation


@dataclass
class EnvEstimate:
    env: EnvironmentMap
    relative_residual: float
    iterations: int
    converged: bool
    status: str
    warnings: list[str] = field(default_factory=list)


def nnls_projected_gradient(G, h, bb, ridge=0.0, max_iters=500, tol=1e-4, x0=None):
    """Minimise ``|A x - b|^2 + ridge |x|^2`` over ``x >= 0`` given ``G = A^T A``, ``h = A^T b``, ``bb = b^T b``.

    Projected gradient with Barzilai-Borwein trial steps and Armijo
    backtracking along the projection arc. Stops when the relative residual
    ``|A x - b| / |b|`` improves by less than ``tol`` (relative) between
    iterations. Returns ``(x, relative_residual, iterations, converged)``.
    """
    n = G.shape[0]
    Gr = G + ridge * np.eye(n)

    def objective(x):
        return float(x @ Gr @ x - 2.0 * h @ x + bb)

    def residual(x):
        r2 = max(float(x @ G @ x - 2.0 * h @ x + bb), 0.0)
        return np.sqrt(r2) / np.sqrt(bb) if bb > 0 else 0.0

    x = np.zeros(n) if x0 is None else np.maximum(np.asarray(x0, dtype=np.float64), 0.0)
    grad = 2.0 * (Gr @ x - h)
    fx = objective(x)
    lipschitz = 2.0 * np.linalg.eigvalsh(Gr)[-1]
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0
    res = residual(x)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        t = step
        for _ in range(40):
            x_new = np.maximum(x - t * grad, 0.0)
            f_new = objective(x_new)
            if f_new <= fx + 1e-4 * grad @ (x_new - x):
                break
            t *= 0.5
        else:
            converged = True
            break
        g_new = 2.0 * (Gr @ x_new - h)
        s = x_new - x
        y = g_new - grad
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 1.0 / lipschitz
        x, grad, fx = x_new, g_new, f_new
        res_new = residual(x)
        if abs(res - res_new) <= tol * max(res_new, 1e-12):
            res = res_new
            converged = True
            break
        res = res_new
    return x, res, it, converged


def estimate_envmap(gbuf: GBuffer, frame, cfg: EnvEstimateConfig | None = None,
                    settings: RenderSettings | None = None, basis=None) -> EnvEstimate:
    """Recover a non-negative ``env_width x env_height`` environment map explaining ``frame``.

    Exposure is fixed at 1 so the returned radiance carries the frame's scale.
    """
    cfg = cfg or EnvEstimateConfig()
    frame = check_image(frame, "frame")
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    if frame.shape[:2] != gbuf.shape:
        raise DimensionMismatchError(
            f"frame is {frame.shape[1]}x{frame.shape[0]} but G-buffer is {gbuf.width}x{gbuf.height}"
        )
    h, w = cfg.env_height, cfg.env_width
    if not np.any(frame != 0):
        env = build_sampling_tables(np.zeros((h, w, 3)))
        return EnvEstimate(env, 0.0, 0, True, "zero_frame")
    B = transport_basis(gbuf, (w, h), settings) if basis is None else basis
    B = B.reshape(-1, 3, h * w)
    target = frame.reshape(-1, 3)

    radiance = np.zeros((h * w, 3))
    num, den = 0.0, 0.0
    iters, all_converged = 0, True
    for c in range(3):
        A = B[:, c, :]
        b = target[:, c]
        # warm start at the best uniform environment; lambert transport barely
        # constrains high frequencies, so the solver should only add detail the data asks for
        s = A.sum(axis=1)
        ss = float(s @ s)
        x0 = np.full(A.shape[1], max(float(s @ b) / ss, 0.0) if ss > 0 else 0.0)
        x, res, it, conv = nnls_projected_gradient(
            A.T @ A, A.T @ b, float(b @ b), cfg.ridge, cfg.max_iters, cfg.tol, x0=x0
        )
        radiance[:, c] = x
        num += (res * np.sqrt(b @ b)) ** 2
        den += float(b @ b)
        iters = max(iters, it)
        all_converged &= conv
    rel = float(np.sqrt(num / den)) if den > 0 else 0.0
    env = build_sampling_tables(radiance.reshape(h, w, 3))
    warnings = []
    status = "converged"
    if not all_converged:
        status = "max_iters"
        warnings.append(f"environment estimate did not converge in {cfg.max_iters} iterations")
        log.warning(warnings[-1])
    return EnvEstimate(env, rel, iters, all_converged, status, warnings)


# ---------------------------------------------------------------------------
# refinement


def _as_maps(props) -> dict[str, np.ndarray]:
    if isinstance(props, GBuffer):
        return props.maps()
    return {k: np.asarray(v, dtype=np.float64) for k, v in props.items()}


def loss_lp(rendered, target, props, props_init, delta: float) -> float:
    """Reconstruction MSE plus ``delta`` times the summed per-map mean squared drift."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DimensionMismatchError(f"rendered {rendered.shape} vs target {target.shape}")
    maps, init = _as_maps(props), _as_maps(props_init)
    l_re = float(np.mean((rendered - target) ** 2))
    l_cons = 0.0
    for name, value in maps.items():
        if name not in init:
            raise ValidationError(f"no initial value for map {name!r}")
        if value.shape != init[name].shape:
            raise DimensionMismatchError(f"{name}: {value.shape} vs {init[name].shape}")
        l_cons += float(np.mean((value - init[name]) ** 2))
    return l_re + delta * l_cons


class RefineProblem:
    """Loss and gradients of the refinement objective over albedo and roughness.

    Rendering reuses one fixed set of light samples, so the rendered frame is
    a deterministic, smooth function of the maps. ``F0`` is frozen at the
    initial albedo, which makes the frame linear in albedo.
    """

    def __init__(self, gbuf: GBuffer, frame, env: EnvironmentMap, delta: float, settings: RenderSettings):
        self.gbuf = gbuf
        self.delta = float(delta)
        self.mode = settings.mode
        self.target = frame.reshape(-1, 3)
        self.samples = frame_samples(gbuf, env, settings)
        self.exposure = settings.exposure
        self.albedo0 = gbuf.albedo.reshape(-1, 3).copy()
        self.rough0 = gbuf.roughness.reshape(-1).copy()
        self.metal = gbuf.metallic.reshape(-1)
        self.normals = gbuf.normal.reshape(-1, 3)
        self.views = gbuf.view_dirs().reshape(-1, 3)
        self.f0 = specular_f0(self.albedo0, self.metal)
        self._cache: tuple[bytes, tuple[np.ndarray, np.ndarray]] | None = None

    @property
    def optimises_roughness(self) -> bool:
        return self.mode != "lambert"

    def components(self, rough):
        key = rough.tobytes()
        if self._cache is None or self._cache[0] != key:
            dif, spec = shade_components(self.samples, self.f0, rough, self.metal, self.normals, self.views, self.mode)
            self._cache = (key, (dif * self.exposure, spec * self.exposure))
        return self._cache[1]

    def render(self, albedo, rough):
        dif, spec = self.components(rough)
        return albedo * dif + spec

    def loss(self, albedo, rough) -> float:
        residual = self.render(albedo, rough) - self.target
        l_re = float(np.mean(residual ** 2))
        l_cons = float(np.mean((albedo - self.albedo0) ** 2)) + float(np.mean((rough - self.rough0) ** 2))
        return l_re + self.delta * l_cons

    def albedo_gradient(self, albedo, rough):
        """Exact gradient of :meth:`loss` with respect to the albedo map."""
        dif, spec = self.components(rough)
        residual = albedo * dif + spec - self.target
        n = residual.size
        return 2.0 * residual * dif / n + self.delta * 2.0 * (albedo - self.albedo0) / albedo.size

    def roughness_gradient(self, albedo, rough, h: float = 1e-2):
        """Per-pixel central finite differences (one-sided at the [0, 1] bounds)."""
        up = np.minimum(rough + h, 1.0)
        dn = np.maximum(rough - h, 0.0)
        r_up = self.render(albedo, up) - self.target
        r_dn = self.render(albedo, dn) - self.target
        n = r_up.size
        d_re = (np.sum(r_up ** 2, axis=1) - np.sum(r_dn ** 2, axis=1)) / (up - dn) / n
        return d_re + self.delta * 2.0 * (rough - self.rough0) / rough.size


@dataclass
class RefineResult:
    gbuffer: GBuffer
    loss_trace: list[float]
    iterations: int
    accepted: int


def refine_properties(gbuf_init: GBuffer, frame, env: EnvironmentMap, cfg: RefineConfig | None = None,
                      settings: RenderSettings | None = None) -> RefineResult:
    """Gradient descent on albedo (analytic) and roughness (finite differences).

    Updates are scaled by map size so ``step_size`` acts per element, then
    projected to [0, 1]. A step that would increase the loss is halved up to
    eight times; if none succeeds the run stops. The step grows by 1.5x after
    each accepted iteration.
    """
    cfg = cfg or RefineConfig()
    settings = settings or RenderSettings()
    frame = check_image(frame, "frame")
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    if frame.shape[:2] != gbuf_init.shape:
        raise DimensionMismatchError(
            f"frame is {frame.shape[1]}x{frame.shape[0]} but G-buffer is {gbuf_init.width}x{gbuf_init.height}"
        )
    if cfg.iterations == 0:
        return RefineResult(gbuf_init, [], 0, 0)

    inner = RenderSettings(spp=cfg.spp_inner, mode=settings.mode, sampler=settings.sampler,
                           seed=settings.seed, exposure=settings.exposure, stratified=settings.stratified)
    prob = RefineProblem(gbuf_init, frame, env, cfg.delta, inner)
    albedo = prob.albedo0.copy()
    rough = prob.rough0.copy()
    loss = prob.loss(albedo, rough)
    if not np.isfinite(loss):
        raise ValidationError("refinement loss is not finite")
    trace = [loss]
    step = cfg.step_size
    max_step = cfg.step_size * 1e4
    accepted = 0
    it = 0
    for it in range(1, cfg.iterations + 1):
        g_a = prob.albedo_gradient(albedo, rough) * albedo.size
        g_r = prob.roughness_gradient(albedo, rough) * rough.size if prob.optimises_roughness else None
        t = step
        for _ in range(9):
            a_new = np.clip(albedo - t * g_a, 0.0, 1.0)
            r_new = np.clip(rough - t * g_r, 0.0, 1.0) if g_r is not None else rough
            new_loss = prob.loss(a_new, r_new)
            if not np.isfinite(new_loss):
                raise ValidationError("refinement loss is not finite")
            if new_loss <= loss:
                break
            t *= 0.5
        else:
            break
        if new_loss == loss and np.array_equal(a_new, albedo) and np.array_equal(r_new, rough):
            break
        albedo, rough, loss = a_new, r_new, new_loss
        trace.append(loss)
        accepted += 1
        step = min(t * 1.5, max_step)

    refined = gbuf_init.replace(
        albedo=albedo.reshape(gbuf_init.albedo.shape),
        roughness=rough.reshape(gbuf_init.roughness.shape),
    )
    return RefineResult(refined, trace, it, accepted)
