import numpy as np
import pytest

from relightaug.errors import DimensionMismatchError, ValidationError
from relightaug.temporal import QuotientMap, apply_gain, propagate, quotient_map


def test_gain_formula():
    I0 = np.array([[[0.5, 0.0, 1.0]]])
    I1 = np.array([[[0.25, 0.1, 100.0]]])
    q = quotient_map(I0, I1, epsilon=1e-3, gain_max=8.0)
    np.testing.assert_allclose(q.gain, [[[0.251 / 0.501, 8.0, 8.0]]])


def test_static_scene_reproduces_relit_frame(rng):
    # ratios stay below gain_max, so the only error is the epsilon bias eps * |1 - gain|
    I0 = rng.uniform(0.25, 1.0, (6, 7, 3))
    I0s = rng.uniform(0.05, 2.0, (6, 7, 3))
    q = quotient_map(I0, I0s, epsilon=1e-3)
    for out in propagate([I0] * 5, q):
        assert np.all(np.abs(out - I0s) <= 1e-3 * np.abs(1 - q.gain) + 1e-15)


def test_identity_relight_is_noop(rng):
    I0 = rng.random((4, 4, 3))
    frames = [I0, rng.random((4, 4, 3))]
    out = propagate(frames, quotient_map(I0, I0))
    np.testing.assert_allclose(out[1], frames[1], rtol=1e-15)


def test_frames_are_independent(rng):
    I0 = rng.random((4, 4))
    q = quotient_map(I0, 2 * I0)
    frames = [rng.random((4, 4)) for _ in range(3)]
    full = propagate(frames, q)
    np.testing.assert_array_equal(full[2], apply_gain(frames[2], q, 2))


def test_errors():
    with pytest.raises(ValidationError):
        quotient_map(np.ones((2, 2)), np.ones((2, 2)), epsilon=0)
    with pytest.raises(DimensionMismatchError):
        quotient_map(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValidationError):
        quotient_map(-np.ones((2, 2)), np.ones((2, 2)))
    q = quotient_map(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(DimensionMismatchError, match="frame 3"):
        propagate([np.ones((2, 2))] * 3 + [np.ones((3, 3))], q)
    with pytest.raises(ValidationError):
        QuotientMap(np.full((2, 2), 9.0), 1e-3, 8.0)
