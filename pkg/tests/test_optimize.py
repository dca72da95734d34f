import numpy as np
import pytest
from scipy.optimize import nnls

from relightaug.envmap import build_sampling_tables, constant_env, uv_to_dir
from relightaug.errors import DimensionMismatchError, ValidationError
from relightaug.metrics import ssim
from relightaug.optimize import (
    EnvEstimateConfig,
    RefineConfig,
    RefineProblem,
    estimate_envmap,
    loss_lp,
    nnls_projected_gradient,
    refine_properties,
    texel_quadrature,
    transport_basis,
)
from relightaug.relight import RenderSettings, relight_frame
from relightaug.scenes import smooth_random_env, sphere_gbuffer

LAMBERT = RenderSettings(mode="lambert")


@pytest.fixture(scope="module")
def sphere():
    return sphere_gbuffer(24, albedo=0.6, max_tilt_deg=85)


@pytest.fixture(scope="module")
def basis(sphere):
    return transport_basis(sphere, (16, 8), LAMBERT)


def test_quadrature_weights_cover_sphere():
    _, w = texel_quadrature(8, 16, 4)
    assert w.sum() == pytest.approx(4 * np.pi, rel=1e-12)
    with pytest.raises(ValidationError):
        texel_quadrature(8, 16, 3)


def test_basis_is_linear_in_radiance(sphere, basis):
    E = smooth_random_env(8, 16, seed=1)
    img = np.einsum("hwcj,jc->hwc", basis, E.reshape(-1, 3))
    mc = relight_frame(sphere, build_sampling_tables(E), RenderSettings(spp=1024, mode="lambert"))
    err = np.sqrt(np.mean((img - mc) ** 2) / np.mean(mc ** 2))
    assert err < 0.01


def test_basis_resolution_limit(sphere):
    with pytest.raises(ValidationError):
        transport_basis(sphere, (128, 64))


def test_nnls_matches_scipy(rng):
    A = rng.random((60, 12))
    b = rng.random(60) - 0.3
    x_ref, _ = nnls(A, b)
    x, res, _, conv = nnls_projected_gradient(A.T @ A, A.T @ b, b @ b, 0.0, 5000, 1e-12)
    assert conv
    np.testing.assert_allclose(x, x_ref, atol=1e-4)
    assert res == pytest.approx(np.linalg.norm(A @ x_ref - b) / np.linalg.norm(b), rel=1e-4)
    assert x.min() >= 0.0


def test_zero_frame_returns_black_env(sphere):
    est = estimate_envmap(sphere, np.zeros(sphere.shape + (3,)))
    assert est.status == "zero_frame" and not np.any(est.env.radiance)


def test_recovers_constant_env_facing_camera(sphere, basis):
    frame = relight_frame(sphere, constant_env(0.8), RenderSettings(spp=256, mode="lambert"))
    est = estimate_envmap(sphere, frame, EnvEstimateConfig(16, 8), LAMBERT, basis=basis)
    v = (np.arange(8) + 0.5) / 8
    u = (np.arange(16) + 0.5) / 16
    d = uv_to_dir(u[None], v[:, None])
    front = est.env.radiance[d[..., 2] > 0.5]
    np.testing.assert_allclose(front, 0.8, rtol=0.1)


def test_rerender_matches_input(sphere, basis):
    E = smooth_random_env(8, 16, seed=3) * 0.6
    frame = relight_frame(sphere, build_sampling_tables(E), RenderSettings(spp=512, mode="lambert"))
    est = estimate_envmap(sphere, frame, EnvEstimateConfig(16, 8), LAMBERT, basis=basis)
    re = relight_frame(sphere, est.env, RenderSettings(spp=512, mode="lambert"))
    assert ssim(re, frame) >= 0.95
    assert est.relative_residual < 0.05


def test_estimate_shape_mismatch(sphere):
    with pytest.raises(DimensionMismatchError):
        estimate_envmap(sphere, np.ones((5, 5, 3)))


def test_loss_lp_terms():
    a = {"albedo": np.full((2, 2, 3), 0.5)}
    b = {"albedo": np.full((2, 2, 3), 0.3)}
    r = np.ones((2, 2, 3))
    assert loss_lp(r, r, a, a, 1.0) == 0.0
    assert loss_lp(r, r * 0.0, a, b, 0.0) == pytest.approx(1.0)
    assert loss_lp(r, r, a, b, 2.0) == pytest.approx(2 * 0.04)
    with pytest.raises(ValidationError):
        loss_lp(r, r, a, {}, 1.0)


@pytest.mark.parametrize("mode", ["lambert", "disney"])
def test_albedo_gradient_matches_finite_differences(mode, rng):
    g = sphere_gbuffer(8, albedo=rng.uniform(0.2, 0.8, (8, 8, 3)), roughness=0.5, metallic=0.2)
    env = build_sampling_tables(smooth_random_env(8, 16, seed=2))
    frame = relight_frame(g, env, RenderSettings(spp=64, mode=mode, seed=5))
    prob = RefineProblem(g, frame * 1.1, env, 0.1, RenderSettings(spp=16, mode=mode))
    a, r = prob.albedo0.copy(), prob.rough0.copy()
    grad = prob.albedo_gradient(a, r)
    for i, c in [(3, 0), (20, 1), (60, 2)]:
        e = 1e-5
        ap, am = a.copy(), a.copy()
        ap[i, c] += e
        am[i, c] -= e
        fd = (prob.loss(ap, r) - prob.loss(am, r)) / (2 * e)
        assert abs(grad[i, c] - fd) <= 1e-3 * abs(fd)


def test_refinement_recovers_albedo(rng):
    g = sphere_gbuffer(16, albedo=rng.uniform(0.2, 0.8, (16, 16, 3)), max_tilt_deg=80)
    env = build_sampling_tables(smooth_random_env(16, 32, seed=1))
    frame = relight_frame(g, env, RenderSettings(spp=1024, mode="lambert", seed=7))
    bad = g.replace(albedo=np.clip(g.albedo * rng.uniform(0.5, 1.5, g.albedo.shape), 0, 1))
    res = refine_properties(bad, frame, env, RefineConfig(delta=0.0, iterations=200),
                            RenderSettings(spp=64, mode="lambert"))
    err = np.abs(res.gbuffer.albedo - g.albedo) / g.albedo
    assert np.median(err) < 0.05
    assert np.all(np.diff(res.loss_trace) <= 0)
    assert np.array_equal(res.gbuffer.normal, g.normal)


def test_refine_zero_iterations_is_identity(sphere):
    res = refine_properties(sphere, np.ones(sphere.shape + (3,)), constant_env(1.0), RefineConfig(iterations=0))
    assert res.gbuffer is sphere and res.loss_trace == []


@pytest.mark.parametrize("kw", [{"delta": -1}, {"iterations": -1}, {"step_size": 0}, {"spp_inner": 0}])
def test_refine_config_validation(kw):
    with pytest.raises(ValidationError):
        RefineConfig(**kw)
