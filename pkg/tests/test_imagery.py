import struct

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from relightaug.errors import (
    BadMagicError,
    DimensionMismatchError,
    MissingFileError,
    TruncatedFileError,
    UnsupportedFormatError,
    ValidationError,
    ZeroScaleError,
)
from relightaug.imagery import (
    ValidationReport,
    load_gbuffer,
    load_pfm,
    load_png,
    read_png_raw,
    save_gbuffer,
    save_pfm,
    save_png,
    srgb_decode,
    srgb_encode,
)
from relightaug.scenes import sphere_gbuffer


def test_srgb_fixed_points():
    assert srgb_decode(0.0) == 0.0
    assert srgb_decode(1.0) == 1.0


def test_srgb_decode_half(reference_values):
    assert srgb_decode(0.5) == pytest.approx(reference_values["scalars"]["srgb_decode_0.5"], abs=1e-12)
    assert srgb_decode(0.5) == pytest.approx(0.21404, abs=1e-5)


def test_srgb_round_trip_dense_grid():
    v = np.linspace(0.0, 1.0, 100001)
    assert np.max(np.abs(srgb_encode(srgb_decode(v)) - v)) < 1e-6


def test_srgb_matches_oracle_pointwise():
    v = np.linspace(0, 1, 257)
    np.testing.assert_allclose(srgb_decode(v), [oracles.srgb_to_linear(x) for x in v], rtol=0, atol=1e-15)
    np.testing.assert_allclose(srgb_encode(v), [oracles.linear_to_srgb(x) for x in v], rtol=0, atol=1e-15)


@given(st.floats(0.0, 1.0))
def test_srgb_decode_monotone(x):
    assert srgb_decode(x) <= srgb_decode(min(1.0, x + 1e-6)) + 1e-15


def test_srgb_out_of_range_clamped_and_flagged():
    report = ValidationReport()
    out = srgb_decode(np.array([-0.5, 0.5, 1.5]), report)
    assert out[0] == 0.0 and out[2] == 1.0
    assert report
    assert any("clamp" in m for m in report.warnings)


def test_png_black_and_white(tmp_path):
    for value, expect in ((0, 0.0), (255, 1.0)):
        p = tmp_path / f"{value}.png"
        cv2.imwrite(str(p), np.full((4, 5, 3), value, np.uint8))
        img = load_png(p)
        assert img.shape == (4, 5, 3)
        assert np.all(img == expect)


def test_png_quantized_round_trip_bit_stable(tmp_path, rng):
    enc = np.round(rng.random((7, 9, 3)) * 255) / 255
    img = srgb_decode(enc)
    p = tmp_path / "a.png"
    save_png(img, p)
    back = load_png(p)
    assert back.shape == img.shape
    np.testing.assert_array_equal(back, img)
    np.testing.assert_array_equal(np.round(srgb_encode(back) * 255), np.round(enc * 255))
    save_png(back, tmp_path / "b.png")
    np.testing.assert_array_equal(load_png(tmp_path / "b.png"), back)


def test_png_16bit_and_gray_alpha(tmp_path):
    p = tmp_path / "g16.png"
    cv2.imwrite(str(p), np.full((3, 3), 65535, np.uint16))
    assert np.all(read_png_raw(p) == 1.0)
    p = tmp_path / "rgba.png"
    cv2.imwrite(str(p), np.dstack([np.zeros((2, 2, 3), np.uint8), np.full((2, 2), 255, np.uint8)]))
    assert load_png(p).shape == (2, 2, 3)


def test_png_errors_are_distinct(tmp_path):
    with pytest.raises(MissingFileError) as e:
        load_png(tmp_path / "nope.png")
    assert "nope.png" in str(e.value)
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png at all, clearly" * 3)
    with pytest.raises(Exception) as e:
        load_png(bad)
    assert "bad.png" in str(e.value) and not isinstance(e.value, MissingFileError)
    # rewrite the bit-depth byte of a valid PNG header to 4
    ok = tmp_path / "ok.png"
    cv2.imwrite(str(ok), np.zeros((2, 2), np.uint8))
    raw = bytearray(ok.read_bytes())
    raw[24] = 4
    low = tmp_path / "low.png"
    low.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedFormatError) as e:
        load_png(low)
    assert "low.png" in str(e.value)


def test_pfm_lossless_round_trip(tmp_path, rng):
    for shape in ((5, 7, 3), (4, 6)):
        img = (rng.normal(size=shape) * 1e3).astype(np.float32)
        p = tmp_path / "x.pfm"
        save_pfm(img, p)
        back = load_pfm(p)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, img)


def test_pfm_single_value(tmp_path):
    p = tmp_path / "one.pfm"
    p.write_bytes(b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 2.5))
    img = load_pfm(p)
    assert img.shape == (1, 1) and img[0, 0] == 2.5


def _reference_pfm(path, img, big_endian):
    """Hand-written PFM writer: rows bottom to top, scale sign encodes endianness."""
    h, w = img.shape[:2]
    fmt = ">" if big_endian else "<"
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n{1.0 if big_endian else -1.0}\n".encode())
        for y in range(h - 1, -1, -1):
            for x in range(w):
                f.write(struct.pack(fmt + "3f", *img[y, x]))


def test_pfm_endianness_twins(tmp_path, rng):
    img = rng.random((3, 4, 3)).astype(np.float32)
    _reference_pfm(tmp_path / "le.pfm", img, False)
    _reference_pfm(tmp_path / "be.pfm", img, True)
    np.testing.assert_array_equal(load_pfm(tmp_path / "le.pfm"), img)
    np.testing.assert_array_equal(load_pfm(tmp_path / "be.pfm"), load_pfm(tmp_path / "le.pfm"))
    save_pfm(img, tmp_path / "ours_be.pfm", byteorder=">")
    assert (tmp_path / "ours_be.pfm").read_bytes() == (tmp_path / "be.pfm").read_bytes()


def test_pfm_errors(tmp_path):
    p = tmp_path / "m.pfm"
    p.write_bytes(b"P6\n1 1\n-1\n\0\0\0\0")
    with pytest.raises(BadMagicError):
        load_pfm(p)
    p.write_bytes(b"PF\n2 2\n-1\n" + b"\0" * 8)
    with pytest.raises(TruncatedFileError):
        load_pfm(p)
    p.write_bytes(b"Pf\n1 1\n0.0\n\0\0\0\0")
    with pytest.raises(ZeroScaleError):
        load_pfm(p)


def test_gbuffer_round_trip(tmp_path):
    g = sphere_gbuffer(8, albedo=0.3, roughness=0.7, metallic=0.2)
    save_gbuffer(g, tmp_path / "gb")
    h = load_gbuffer(tmp_path / "gb")
    assert h.shape == (8, 8)
    np.testing.assert_allclose(h.albedo, g.albedo, atol=1e-7)
    np.testing.assert_allclose(h.intrinsics, g.intrinsics)


def test_gbuffer_material_range_clamped_and_flagged(tmp_path):
    g = sphere_gbuffer(4)
    save_gbuffer(g, tmp_path)
    rough = np.full((4, 4), 0.5, np.float32)
    rough[0, 0] = 1.7
    save_pfm(rough, tmp_path / "roughness.pfm")
    report = ValidationReport()
    h = load_gbuffer(tmp_path, report)
    assert h.roughness[0, 0] == 1.0 and h.roughness.max() == 1.0
    assert len(report.warnings) == 1 and "roughness" in report.warnings[0]


def test_gbuffer_dimension_mismatch_names_both_maps(tmp_path):
    g = sphere_gbuffer(64)
    save_gbuffer(g, tmp_path)
    save_pfm(np.ones((32, 32), np.float32), tmp_path / "depth.pfm")
    with pytest.raises(DimensionMismatchError) as e:
        load_gbuffer(tmp_path)
    msg = str(e.value)
    assert "albedo" in msg and "depth" in msg and "64x64" in msg and "32x32" in msg


def test_gbuffer_png_normals_decode_to_unit(tmp_path, rng):
    g = sphere_gbuffer(16, max_tilt_deg=60)
    save_gbuffer(g, tmp_path)
    (tmp_path / "normal.pfm").unlink()
    enc = np.round((g.normal + 1) / 2 * 65535).astype(np.uint16)
    cv2.imwrite(str(tmp_path / "normal.png"), enc[..., ::-1])
    h = load_gbuffer(tmp_path)
    np.testing.assert_allclose(np.linalg.norm(h.normal, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(h.normal, g.normal, atol=1e-4)


def test_gbuffer_rejects_bad_normals_and_depth(tmp_path):
    g = sphere_gbuffer(4)
    save_gbuffer(g, tmp_path)
    save_pfm((g.normal * 1.05).astype(np.float32), tmp_path / "normal.pfm")
    with pytest.raises(ValidationError):
        load_gbuffer(tmp_path)
    save_pfm((g.normal * 1.005).astype(np.float32), tmp_path / "normal.pfm")
    np.testing.assert_allclose(np.linalg.norm(load_gbuffer(tmp_path).normal, axis=-1), 1.0, atol=1e-12)
    d = np.ones((4, 4), np.float32)
    d[1, 1] = 0.0
    save_pfm(d, tmp_path / "depth.pfm")
    with pytest.raises(ValidationError):
        load_gbuffer(tmp_path)


def test_gbuffer_missing_map(tmp_path):
    save_gbuffer(sphere_gbuffer(4), tmp_path)
    (tmp_path / "roughness.pfm").unlink()
    with pytest.raises(MissingFileError) as e:
        load_gbuffer(tmp_path)
    assert "roughness" in str(e.value)


def test_gbuffer_rejects_out_of_range_albedo():
    g = sphere_gbuffer(4)
    with pytest.raises(ValidationError):
        g.replace(albedo=np.full((4, 4, 3), 1.2))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_png_round_trip_keeps_dimensions(tmp_path_factory, h, w):
    p = tmp_path_factory.mktemp("png") / "x.png"
    save_png(np.random.default_rng(h * 7 + w).random((h, w, 3)), p)
    assert load_png(p).shape == (h, w, 3)
