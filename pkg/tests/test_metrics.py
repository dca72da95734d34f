import numpy as np
import pytest

import oracles
from make_fixtures import gradient_images
from relightaug.errors import DimensionMismatchError, ValidationError
from relightaug.metrics import PSNR_CAP_DB, SsimParams, psnr, ssim, ssim_map, temporal_ssim, to_luma


def _noisy(a):
    return np.clip(a + np.random.default_rng(5).normal(0, 0.05, a.shape), 0, 1)


def test_fixture_values(reference_values):
    a, b = gradient_images()
    ref = reference_values["ssim"]
    assert abs(ssim(a, b) - ref["gradient_pair"]) <= 1e-9
    assert abs(ssim(a, _noisy(a)) - ref["gradient_vs_noisy"]) <= 1e-9


def test_oracle_on_random_grayscale(rng):
    a = rng.random((15, 19))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    got = ssim(a, b)
    assert got == pytest.approx(oracles.ssim_direct(oracles.display_luma(a), oracles.display_luma(b)), abs=1e-9)


def test_identity_and_symmetry(rng):
    a = rng.random((20, 20, 3))
    b = rng.random((20, 20, 3))
    assert ssim(a, a) == 1.0
    assert ssim(a, b) == ssim(b, a)
    assert -1.0 <= ssim(a, b) < 1.0


def test_map_shape():
    assert ssim_map(np.zeros((20, 30)), np.zeros((20, 30))).shape == (10, 20)


def test_luma_clamps_hdr():
    np.testing.assert_allclose(to_luma(np.full((2, 2, 3), 5.0)), 1.0)
    assert to_luma(np.zeros((2, 2))).max() == 0.0


def test_errors():
    with pytest.raises(DimensionMismatchError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(ValidationError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValidationError):
        SsimParams(window=4)
    with pytest.raises(ValidationError):
        temporal_ssim([np.zeros((12, 12))])


def test_temporal_ssim_static_is_one(rng):
    f = rng.random((12, 12, 3))
    assert temporal_ssim([f, f, f]) == 1.0


def test_temporal_ssim_is_mean_of_pairs(rng):
    seq = [rng.random((12, 12)) for _ in range(4)]
    assert temporal_ssim(seq) == pytest.approx(np.mean([ssim(seq[i], seq[i + 1]) for i in range(3)]), abs=0)


def test_psnr():
    a = np.zeros((4, 4))
    assert psnr(a, a) == PSNR_CAP_DB
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert isinstance(psnr(a, a + 0.1), float)
    with pytest.raises(DimensionMismatchError):
        psnr(a, np.zeros((4, 5)))
