import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from relightaug.errors import ValidationError
from relightaug.sampling import cosine_hemisphere
from relightaug.shading import (
    MaterialSample,
    brdf_eval,
    disney_diffuse,
    fresnel_schlick,
    ggx_ndf,
    ggx_specular,
    ggx_specular_f0,
    smith_g1,
)

N = np.array([0.0, 0.0, 1.0])


def _dir(theta_deg, phi_deg=0.0):
    t, p = math.radians(theta_deg), math.radians(phi_deg)
    return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)])


unit = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: 0.1 < math.sqrt(sum(x * x for x in v))
).map(lambda v: np.array(v) / np.linalg.norm(v))


def test_fresnel(reference_values):
    f0 = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(fresnel_schlick(f0, 1.0), f0)
    np.testing.assert_allclose(fresnel_schlick(f0, 0.0), 1.0)
    assert fresnel_schlick(0.04, 0.5) == pytest.approx(reference_values["scalars"]["fresnel_0.04_0.5"], abs=1e-15)


def test_ndf_values(reference_values):
    assert ggx_ndf(1.0, 1.0) == pytest.approx(1 / math.pi)
    assert ggx_ndf(0.5, 1.0) == pytest.approx(reference_values["scalars"]["ndf_0.5_1"], rel=1e-12)
    with pytest.raises(ValidationError):
        ggx_ndf(0.0, 1.0)


@pytest.mark.parametrize("alpha", [0.1, 0.2, 0.5, 0.8, 1.0])
def test_ndf_normalisation(alpha):
    # integrate D(h) cos(h) over the hemisphere in cos-theta, fine enough for narrow lobes
    c = np.linspace(0, 1, 400_001)
    integrand = ggx_ndf(alpha, c) * c * 2 * math.pi
    assert np.trapezoid(integrand, c) == pytest.approx(1.0, abs=1e-2)


def test_diffuse_normal_incidence():
    a = np.array([0.2, 0.5, 0.8])
    np.testing.assert_allclose(disney_diffuse(None, N, N, N, albedo=a, roughness=0.0), a / math.pi)


def test_diffuse_below_horizon():
    assert np.all(disney_diffuse(None, N, _dir(100), N, albedo=[1, 1, 1], roughness=0.5) == 0)


def test_diffuse_60_degrees(reference_values):
    val = disney_diffuse(None, N, _dir(60), N, albedo=[0.6, 0.6, 0.6], roughness=1.0)
    np.testing.assert_allclose(val, reference_values["scalars"]["burley_60deg"], rtol=1e-12)


def test_specular_zero_below_horizon_and_red_tint():
    assert np.all(ggx_specular(MaterialSample((1, 1, 1), 0.5, 0.5), N, _dir(95), N) == 0)
    s = ggx_specular(MaterialSample((1, 0, 0), 0.5, 1.0), N, N, N)
    assert s[0] > 0 and s[1] == 0 and s[2] == 0


def test_specular_directional_albedo(reference_values):
    rng = np.random.default_rng(3)
    m = 1_000_000
    d = cosine_hemisphere(N[None], rng.random((1, m)), rng.random((1, m)))[0]
    f = ggx_specular(None, N, d, N, albedo=[1, 1, 1], roughness=0.5, metallic=1.0)
    est = float(np.mean(f[:, 0]) * math.pi)
    assert est == pytest.approx(reference_values["scalars"]["spec_albedo_R0.5_M1"], rel=0.01)


def test_metallic_kills_diffuse():
    l, v = _dir(30, 10), _dir(20, 200)
    a = brdf_eval(None, N, l, v, albedo=[0.2, 0.9, 0.4], roughness=0.6, metallic=1.0)
    b = brdf_eval(None, N, l, v, albedo=[0.9, 0.1, 0.4], roughness=0.6, metallic=1.0)
    spec = ggx_specular(None, N, l, v, albedo=[0.2, 0.9, 0.4], roughness=0.6, metallic=1.0)
    np.testing.assert_allclose(a, spec)
    assert not np.allclose(a, b)


def test_lambert_mode():
    val = brdf_eval(MaterialSample((0.5, 0.5, 0.5), 0.3, 0.7), N, _dir(40, 30), _dir(70, 250), "lambert")
    np.testing.assert_allclose(val, 0.5 / math.pi)


@settings(max_examples=200, deadline=None)
@given(unit, unit, unit, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_matches_oracle_and_composition(n, l, v, a, r, m):
    albedo = np.array([a, 1 - a, 0.5])
    got = brdf_eval(None, n, l, v, albedo=albedo, roughness=r, metallic=m)
    ref = oracles.brdf(tuple(albedo), r, m, tuple(n), tuple(l), tuple(v))
    np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-12)
    comp = (1 - m) * disney_diffuse(None, n, l, v, albedo=albedo, roughness=r) + ggx_specular(
        None, n, l, v, albedo=albedo, roughness=r, metallic=m
    )
    np.testing.assert_allclose(got, comp, rtol=1e-12, atol=1e-15)
    assert np.all(got >= 0)


@settings(max_examples=200, deadline=None)
@given(unit, unit, unit, st.floats(0, 1), st.floats(0, 1))
def test_reciprocity(n, l, v, r, m):
    mat = MaterialSample((0.3, 0.6, 0.9), r, m)
    np.testing.assert_array_equal(brdf_eval(mat, n, l, v, "lambert"), brdf_eval(mat, n, v, l, "lambert"))
    np.testing.assert_allclose(brdf_eval(mat, n, l, v), brdf_eval(mat, n, v, l), rtol=1e-6, atol=1e-12)


def directional_albedo(v, r, m, k=400_000, seed=0):
    """Diffuse lobe by cosine sampling plus specular lobe by GGX normal sampling (unit albedo)."""
    rng = np.random.default_rng(seed)
    d = cosine_hemisphere(N[None], rng.random((1, k)), rng.random((1, k)))[0]
    dif = (1 - m) * float(np.mean(disney_diffuse(None, N, d, v, albedo=[1, 1, 1], roughness=r)[:, 0])) * math.pi
    a = max(r, 0.03) ** 2
    u1, u2 = rng.random(k), rng.random(k)
    ct = np.sqrt((1 - u1) / (1 + (a * a - 1) * u1))
    st_ = np.sqrt(1 - ct * ct)
    h = np.stack([st_ * np.cos(2 * math.pi * u2), st_ * np.sin(2 * math.pi * u2), ct], 1)
    vh = h @ v
    l = 2 * vh[:, None] * h - v
    pdf = a * a / (math.pi * (ct * ct * (a * a - 1) + 1) ** 2) * ct / (4 * np.abs(vh))
    f = ggx_specular(None, N, l, v, albedo=[1, 1, 1], roughness=r, metallic=m)[:, 0]
    spec = float(np.mean(f * np.maximum(l @ N, 0) / pdf))
    return dif + spec


GRAZING = pytest.mark.xfail(strict=True, reason="Burley diffuse + uncompensated GGX exceeds 1.05 at grazing view")


@pytest.mark.parametrize("theta_v", [0, 15, 30, 45, pytest.param(60, marks=GRAZING), pytest.param(80, marks=GRAZING)])
def test_energy_bound(theta_v):
    v = _dir(theta_v)
    worst = max(directional_albedo(v, r, m) for r in (0.03, 0.3, 0.6, 1.0) for m in (0.0, 0.5, 1.0))
    assert worst <= 1.05


def test_visibility_form_equals_smith_product():
    n, l, v = np.array([0, 0, 1.0]), _dir(50), _dir(-20)
    h = (l + v) / np.linalg.norm(l + v)
    alpha = 0.4 ** 2
    k = alpha / 2
    expect = ggx_ndf(alpha, h @ n) * smith_g1(l @ n, k) * smith_g1(v @ n, k) / (4 * (l @ n) * (v @ n))
    expect = expect * fresnel_schlick(np.array([0.04, 0.5, 0.9]), v @ h)
    np.testing.assert_allclose(ggx_specular_f0(np.array([0.04, 0.5, 0.9]), 0.4, n, l, v), expect, rtol=1e-12)
