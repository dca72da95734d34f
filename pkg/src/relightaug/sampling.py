"""Counter-based random numbers and sample patterns.

Every pixel owns a 64-bit stream key derived from ``(seed, x, y)``; the n-th
uniform of a stream is ``hash(key, n)``. Nothing depends on evaluation order
or on how pixels are partitioned between workers.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN3 = np.uint64((0x9E3779B97F4A7C15 * 3) & _MASK64)
_X_SALT = np.uint64(0xD1B54A32D192ED03)
_Y_SALT = np.uint64(0x8CB92BA72F3D8DD7)


def mix64(z) -> np.ndarray:
    """SplitMix64 finaliser on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    shape = z.shape
    z = z.reshape(-1)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return (z ^ (z >> np.uint64(31))).reshape(shape)


def pixel_keys(seed: int, xs, ys) -> np.ndarray:
    """Stream key per pixel: hash(seed) xor hash(x) xor hash(y), then remixed."""
    s = mix64(np.uint64(int(seed) & _MASK64))
    with np.errstate(over="ignore"):
        hx = mix64(np.asarray(xs, dtype=np.uint64) * _X_SALT + _GOLDEN)
        hy = mix64(np.asarray(ys, dtype=np.uint64) * _Y_SALT + _GOLDEN3)
    return mix64(s ^ hx ^ hy)


def uniforms(keys, counters) -> np.ndarray:
    """Uniform doubles in [0, 1) for every (key, counter) pair (broadcast)."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):  # 0-d operands take numpy's scalar path, which warns on wrap
        bits = mix64(keys + (counters + np.uint64(1)) * _GOLDEN)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


_U32 = np.uint32


def _reverse_bits32(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint32)
    x = ((x >> _U32(1)) & _U32(0x55555555)) | ((x & _U32(0x55555555)) << _U32(1))
    x = ((x >> _U32(2)) & _U32(0x33333333)) | ((x & _U32(0x33333333)) << _U32(2))
    x = ((x >> _U32(4)) & _U32(0x0F0F0F0F)) | ((x & _U32(0x0F0F0F0F)) << _U32(4))
    x = ((x >> _U32(8)) & _U32(0x00FF00FF)) | ((x & _U32(0x00FF00FF)) << _U32(8))
    return (x >> _U32(16)) | (x << _U32(16))


def _owen_scramble(x, seed) -> np.ndarray:
    """Hash-based nested uniform scramble (Laine-Karras permutation on reversed bits)."""
    x = _reverse_bits32(x) + seed
    x = x ^ (x * _U32(0x6C50B47C))
    x = x ^ (x * _U32(0xB82F1E52))
    x = x ^ (x * _U32(0xC7AFE638))
    x = x ^ (x * _U32(0x8D22F6E6))
    return _reverse_bits32(x)


def _sobol_dim1(i) -> np.ndarray:
    """Second Sobol dimension (Pascal generator matrix)."""
    i = np.asarray(i, dtype=np.uint32).copy()
    out = np.zeros_like(i)
    v = 1 << 31
    for _ in range(32):
        if not i.any():
            break
        out ^= np.where(i & _U32(1), _U32(v), _U32(0)).astype(np.uint32)
        i >>= _U32(1)
        v ^= v >> 1
    return out


def _scrambled_sobol(keys, n: int, stream: int) -> tuple[np.ndarray, np.ndarray]:
    seeds = []
    for k in range(3):
        salt = np.uint64((stream * 0x9E3779B97F4A7C15 + k * 0xBF58476D1CE4E5B9) & _MASK64)
        seeds.append((mix64(keys ^ salt) & np.uint64(0xFFFFFFFF)).astype(np.uint32))
    idx = _owen_scramble(np.arange(n, dtype=np.uint32)[None, :], seeds[0])
    x = _owen_scramble(_reverse_bits32(idx), seeds[1])
    y = _owen_scramble(_sobol_dim1(idx), seeds[2])
    scale = 1.0 / 4294967296.0
    return x.astype(np.float64) * scale, y.astype(np.float64) * scale


def sample_2d(keys, n: int, stream: int, stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``n`` 2D points per key, returned as two ``(len(keys), n)`` arrays.

    Stratified points are an Owen-scrambled Sobol net when ``n`` is a power
    of two and a Latin hypercube otherwise. Unstratified points are
    independent uniforms. ``stream`` selects an independent set of points.
    """
    keys = np.asarray(keys, dtype=np.uint64)[:, None]
    if stratified and n > 1 and n & (n - 1) == 0:
        return _scrambled_sobol(keys, n, stream)
    base = np.uint64(stream) << np.uint64(40)
    c = base + np.arange(n, dtype=np.uint64)[None, :] * np.uint64(4)
    u1 = uniforms(keys, c)
    u2 = uniforms(keys, c + np.uint64(1))
    if not stratified or n == 1:
        return u1, u2
    perm = np.argsort(uniforms(keys, c + np.uint64(2)), axis=1, kind="stable")
    i = np.arange(n)[None, :]
    return (i + u1) / n, (perm + u2) / n


def orthonormal_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Tangent frames for ``(..., 3)`` unit normals (Duff et al. branchless form)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    s = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, s


def cosine_hemisphere(n, u1, u2) -> np.ndarray:
    """Cosine-weighted directions around normals ``n`` (shape ``(P, 3)``) for ``(P, S)`` uniforms."""
    t, s = orthonormal_basis(n)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(0.0, 1.0 - u1))
    return x[..., None] * t[:, None, :] + y[..., None] * s[:, None, :] + z[..., None] * n[:, None, :]
