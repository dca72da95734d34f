"""Material response: Burley diffuse plus GGX microfacet specular (metallic workflow).

All functions broadcast over leading dimensions. Vectors are ``(..., 3)``;
roughness and metallic are ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ROUGHNESS_FLOOR = 0.03
DIELECTRIC_F0 = 0.04
MODES = ("disney", "lambert")


@dataclass(frozen=True)
class MaterialSample:
    albedo: tuple[float, float, float]
    roughness: float
    metallic: float

    def __post_init__(self):
        a = np.asarray(self.albedo, dtype=np.float64)
        if a.shape != (3,) or a.min() < 0 or a.max() > 1:
            raise ValidationError("albedo must be three values in [0, 1]")
        for name in ("roughness", "metallic"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")

    def arrays(self):
        return np.asarray(self.albedo, dtype=np.float64), float(self.roughness), float(self.metallic)


def _dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def fresnel_schlick(f0, cos_theta):
    """Schlick's approximation; ``cos_theta`` broadcasts over the leading dims of ``f0``."""
    w = (1.0 - np.clip(np.asarray(cos_theta, dtype=np.float64), 0.0, 1.0)) ** 5
    if w.ndim:
        w = w[..., None]
    f0 = np.asarray(f0, dtype=np.float64)
    return f0 + (1.0 - f0) * w


def ggx_ndf(alpha, cos_theta_h):
    """Isotropic GGX / Trowbridge-Reitz normal distribution."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValidationError("GGX alpha must be positive")
    a2 = alpha * alpha
    c = np.clip(np.asarray(cos_theta_h, dtype=np.float64), 0.0, 1.0)
    d = c * c * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


def smith_g1(cos_theta, k):
    return cos_theta / (cos_theta * (1.0 - k) + k)


def specular_f0(albedo, metallic):
    albedo = np.asarray(albedo, dtype=np.float64)
    m = np.asarray(metallic, dtype=np.float64)[..., None]
    return (1.0 - m) * DIELECTRIC_F0 + m * albedo


def _half_and_cosines(n, l, v):
    n = np.asarray(n, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nl = _dot(n, l)
    nv = _dot(n, v)
    hsum = l + v
    hlen = np.linalg.norm(hsum, axis=-1, keepdims=True)
    h = hsum / np.where(hlen > 0, hlen, 1.0)
    return h, nl, nv


def disney_diffuse_unit(roughness, n, l, v):
    """Burley diffuse with unit albedo: ``F_d(l) F_d(v) / pi`` (scalar per direction pair)."""
    h, nl, nv = _half_and_cosines(n, l, v)
    lh = _dot(l, h)
    fd90 = 0.5 + 2.0 * np.asarray(roughness) * lh * lh
    cl = np.clip(nl, 0.0, 1.0)
    cv = np.clip(nv, 0.0, 1.0)
    fl = 1.0 + (fd90 - 1.0) * (1.0 - cl) ** 5
    fv = 1.0 + (fd90 - 1.0) * (1.0 - cv) ** 5
    return np.where((nl > 0) & (nv > 0), fl * fv / np.pi, 0.0)


def disney_diffuse(mat: MaterialSample | None = None, n=None, l=None, v=None, *, albedo=None, roughness=None):
    if mat is not None:
        albedo, roughness, _ = mat.arrays()
    return np.asarray(albedo, dtype=np.float64) * disney_diffuse_unit(roughness, n, l, v)[..., None]


def ggx_specular_f0(f0, roughness, n, l, v):
    """Cook-Torrance ``D G F / (4 (n.l)(n.v))`` for an explicit ``F0``."""
    h, nl, nv = _half_and_cosines(n, l, v)
    r = np.maximum(np.asarray(roughness, dtype=np.float64), ROUGHNESS_FLOOR)
    alpha = r * r
    k = alpha / 2.0
    valid = (nl > 0) & (nv > 0)
    cl = np.where(valid, nl, 1.0)
    cv = np.where(valid, nv, 1.0)
    d = ggx_ndf(alpha, _dot(n, h))
    # G / (4 nl nv) with the cosines cancelled; stays finite as nl or nv -> 0
    vis = 1.0 / (4.0 * (cl * (1.0 - k) + k) * (cv * (1.0 - k) + k))
    f = fresnel_schlick(f0, _dot(v, h))
    spec = (d * vis)[..., None] * f
    return np.where(valid[..., None], spec, 0.0)


def ggx_specular(mat: MaterialSample | None = None, n=None, l=None, v=None, *, albedo=None, roughness=None, metallic=None):
    if mat is not None:
        albedo, roughness, metallic = mat.arrays()
    return ggx_specular_f0(specular_f0(albedo, metallic), roughness, n, l, v)


def brdf_eval(mat: MaterialSample | None = None, n=None, l=None, v=None, mode: str = "disney", *,
              albedo=None, roughness=None, metallic=None):
    """Full material response ``(1 - M) f_diffuse + f_specular`` or the Lambert test mode."""
    if mat is not None:
        albedo, roughness, metallic = mat.arrays()
    albedo = np.asarray(albedo, dtype=np.float64)
    if mode == "lambert":
        _, nl, nv = _half_and_cosines(n, l, v)
        return np.where(((nl > 0) & (nv > 0))[..., None], albedo / np.pi, 0.0)
    if mode != "disney":
        raise ValidationError(f"unknown shading mode {mode!r}")
    m = np.asarray(metallic, dtype=np.float64)
    diffuse = albedo * ((1.0 - m) * disney_diffuse_unit(roughness, n, l, v))[..., None]
    return diffuse + ggx_specular_f0(specular_f0(albedo, m), roughness, n, l, v)
