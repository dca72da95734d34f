"""Image containers, sRGB transfer, PNG/PFM I/O and G-buffer assembly.

Images are plain numpy arrays in linear light: ``(H, W, 3)`` for colour and
``(H, W)`` for single-channel maps, row 0 at the top.
"""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    MalformedFileError,
    MissingFileError,
    TruncatedFileError,
    UnsupportedFormatError,
    ValidationError,
    ZeroScaleError,
)

NORMAL_UNIT_TOL = 1e-3
NORMAL_RENORM_TOL = 1e-2
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class ValidationReport:
    """Collects non-fatal problems found while reading image data."""

    warnings: list[str] = field(default_factory=list)

    def flag(self, message: str) -> None:
        self.warnings.append(message)

    def __bool__(self) -> bool:
        return bool(self.warnings)


# ---------------------------------------------------------------------------
# sRGB transfer


def _clamp_unit(v, report: ValidationReport | None, what: str):
    v = np.asarray(v, dtype=np.float64)
    bad = ~((v >= 0.0) & (v <= 1.0))
    if np.any(bad):
        if report is not None:
            report.flag(f"{what}: {int(np.count_nonzero(bad))} value(s) outside [0, 1] clamped")
        v = np.clip(np.nan_to_num(v, nan=0.0), 0.0, 1.0)
    return v


def srgb_decode(v, report: ValidationReport | None = None):
    """sRGB-encoded value(s) in [0, 1] to linear light. Out-of-range input is clamped."""
    v = _clamp_unit(v, report, "srgb_decode")
    out = np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)
    return out if out.ndim else float(out)


def srgb_encode(v, report: ValidationReport | None = None):
    """Linear value(s) in [0, 1] to sRGB encoding; inverse of :func:`srgb_decode`."""
    v = _clamp_unit(v, report, "srgb_encode")
    out = np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)
    return out if out.ndim else float(out)


def luminance(rgb):
    """Rec. 709 luminance of an ``(..., 3)`` array."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * 0.2126 + rgb[..., 1] * 0.7152 + rgb[..., 2] * 0.0722


def channels(img) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def check_image(img, name: str = "image", nonnegative: bool = False) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValidationError(f"{name}: expected (H, W) or (H, W, 3) array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{name}: contains non-finite values")
    if nonnegative and np.any(img < 0):
        raise ValidationError(f"{name}: contains negative values")
    return img


# ---------------------------------------------------------------------------
# PNG


def _png_header(path: Path) -> tuple[int, int]:
    if not path.is_file():
        raise MissingFileError(path, "no such file")
    with open(path, "rb") as f:
        head = f.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise MalformedFileError(path, "not a PNG file")
    bit_depth, colour_type = head[24], head[25]
    if colour_type not in (0, 2, 4, 6):
        raise UnsupportedFormatError(path, f"unsupported PNG colour type {colour_type}")
    if bit_depth not in (8, 16):
        raise UnsupportedFormatError(path, f"unsupported PNG bit depth {bit_depth}")
    return bit_depth, colour_type


def read_png_raw(path) -> np.ndarray:
    """Read a PNG without any transfer function; values scaled to [0, 1]."""
    path = Path(path)
    bit_depth, _ = _png_header(path)
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise MalformedFileError(path, "could not decode PNG data")
    scale = 255.0 if bit_depth == 8 else 65535.0
    data = data.astype(np.float64) / scale
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = data[..., :3]
        elif data.shape[2] == 2:
            data = data[..., 0]
        if data.ndim == 3:
            data = data[..., ::-1]
    return np.ascontiguousarray(data)


def write_png_raw(img, path) -> None:
    """Write [0, 1] values as an 8-bit PNG without any transfer function."""
    img = np.clip(check_image(img), 0.0, 1.0)
    q = np.round(img * 255.0).astype(np.uint8)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[..., ::-1])
    path = Path(path)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"{path}: failed to write PNG")


def load_png(path, report: ValidationReport | None = None) -> np.ndarray:
    return srgb_decode(read_png_raw(path), report)


def save_png(img, path) -> None:
    """Clamp to [0, 1], sRGB-encode and write an 8-bit PNG."""
    write_png_raw(srgb_encode(np.clip(check_image(img), 0.0, 1.0)), path)


# ---------------------------------------------------------------------------
# PFM


def _read_token_line(f, path: Path) -> str:
    line = f.readline()
    if not line:
        raise TruncatedFileError(path, "header ends early")
    return line.decode("ascii", errors="replace").strip()


def load_pfm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "no such file")
    with open(path, "rb") as f:
        magic = _read_token_line(f, path)
        if magic == "PF":
            nch = 3
        elif magic == "Pf":
            nch = 1
        else:
            raise BadMagicError(path, f"bad PFM magic {magic[:8]!r}")
        dims = _read_token_line(f, path)
        m = re.fullmatch(r"(\d+)\s+(\d+)", dims)
        if m is None:
            raise MalformedFileError(path, f"bad PFM dimensions line {dims!r}")
        width, height = int(m.group(1)), int(m.group(2))
        try:
            scale = float(_read_token_line(f, path))
        except ValueError:
            raise MalformedFileError(path, "bad PFM scale line") from None
        if scale == 0.0 or not np.isfinite(scale):
            raise ZeroScaleError(path, "PFM scale must be nonzero")
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        count = width * height * nch
        payload = f.read(count * 4)
    if len(payload) < count * 4:
        raise TruncatedFileError(path, f"expected {count * 4} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    data = data.reshape(height, width, nch)[::-1]
    if nch == 1:
        data = data[..., 0]
    return np.ascontiguousarray(data)


def save_pfm(img, path, byteorder: str = "<") -> None:
    """Write float32 PFM. ``byteorder`` is ``"<"`` (scale -1) or ``">"`` (scale +1)."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic, data = "Pf", img[..., None]
    elif img.ndim == 3 and img.shape[2] == 3:
        magic, data = "PF", img
    else:
        raise ValidationError(f"cannot store shape {img.shape} as PFM")
    if byteorder not in ("<", ">"):
        raise ValueError("byteorder must be '<' or '>'")
    height, width = data.shape[:2]
    scale = -1.0 if byteorder == "<" else 1.0
    header = f"{magic}\n{width} {height}\n{scale}\n".encode("ascii")
    body = np.ascontiguousarray(data[::-1], dtype=byteorder + "f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + body)


def load_image(path, report: ValidationReport | None = None) -> np.ndarray:
    """Load a linear image from ``.pfm`` or ``.png`` by extension."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return load_pfm(path).astype(np.float64)
    return load_png(path, report)


def save_image(img, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        save_pfm(np.asarray(img, dtype=np.float32), path)
    else:
        save_png(img, path)


# ---------------------------------------------------------------------------
# G-buffer


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GBuffer:
    """Per-pixel material and geometry maps of one view.

    Normals are camera-space unit vectors with x right, y up and +z toward the
    camera. Depth is z-depth in metres. ``intrinsics`` is a 3x3 pinhole matrix.
    """

    albedo: np.ndarray
    roughness: np.ndarray
    metallic: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    intrinsics: np.ndarray

    MAPS = ("albedo", "roughness", "metallic", "normal", "depth")

    def __post_init__(self):
        for name in self.MAPS + ("intrinsics",):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        self._validate()

    def _validate(self) -> None:
        expect = {"albedo": 3, "roughness": 1, "metallic": 1, "normal": 3, "depth": 1}
        shape = None
        for name in self.MAPS:
            a = getattr(self, name)
            nch = 3 if a.ndim == 3 else 1
            if a.ndim not in (2, 3) or nch != expect[name] or (a.ndim == 3 and a.shape[2] != 3):
                raise ValidationError(f"{name}: expected {expect[name]} channel(s), got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name}: contains non-finite values")
            if shape is None:
                shape, first = a.shape[:2], name
            elif a.shape[:2] != shape:
                raise DimensionMismatchError(
                    f"{name} is {a.shape[1]}x{a.shape[0]} but {first} is {shape[1]}x{shape[0]}"
                )
        for name in ("albedo", "roughness", "metallic"):
            a = getattr(self, name)
            if a.min() < 0.0 or a.max() > 1.0:
                raise ValidationError(f"{name}: values must lie in [0, 1]")
        length = np.linalg.norm(self.normal, axis=-1)
        if np.any(np.abs(length - 1.0) > NORMAL_UNIT_TOL):
            raise ValidationError("normal: vectors must have unit length")
        if np.any(self.depth <= 0.0):
            raise ValidationError("depth: values must be strictly positive")
        k = self.intrinsics
        if k.shape != (3, 3):
            raise ValidationError("intrinsics: expected a 3x3 matrix")
        if abs(np.linalg.det(k)) < 1e-12:
            raise ValidationError("intrinsics: matrix is singular")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def replace(self, **changes) -> GBuffer:
        return dataclasses.replace(self, **changes)

    def maps(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.MAPS}

    def view_dirs(self) -> np.ndarray:
        """Unit vectors from each pixel's surface point toward the camera (normal frame)."""
        return view_directions(self.intrinsics, self.height, self.width)


def intrinsics_matrix(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def camera_rays(K, height: int, width: int) -> np.ndarray:
    """``K^-1 [x+0.5, y+0.5, 1]`` for every pixel, in the image frame (y down, z forward)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    pix = np.stack([xs + 0.5, ys + 0.5, np.ones_like(xs)], axis=-1)
    return pix @ np.linalg.inv(np.asarray(K, dtype=np.float64)).T


def image_to_normal_frame(v) -> np.ndarray:
    """Image/camera frame (x right, y down, z forward) to normal frame (y up, z toward camera)."""
    v = np.asarray(v, dtype=np.float64)
    return v * np.array([1.0, -1.0, -1.0])


def view_directions(K, height: int, width: int) -> np.ndarray:
    rays = image_to_normal_frame(camera_rays(K, height, width))
    return -rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def _find_map(directory: Path, name: str, exts=(".pfm", ".png")) -> Path:
    for ext in exts:
        p = directory / f"{name}{ext}"
        if p.is_file():
            return p
    raise MissingFileError(directory / f"{name}{exts[0]}", f"missing {name} map")


def _load_data_map(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pfm":
        return load_pfm(path).astype(np.float64)
    return read_png_raw(path)


def read_intrinsics(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "missing intrinsics file")
    tokens = path.read_text().split()
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise MalformedFileError(path, "intrinsics must be four decimals 'fx fy cx cy'") from None
    if len(values) != 4:
        raise MalformedFileError(path, f"expected 4 values, found {len(values)}")
    return intrinsics_matrix(*values)


def load_gbuffer(directory, report: ValidationReport | None = None) -> GBuffer:
    """Load and validate a G-buffer directory.

    Expects ``albedo``, ``roughness``, ``metallic``, ``normal`` and ``depth``
    maps (``.pfm`` preferred, ``.png`` accepted) plus ``intrinsics.txt``.
    PNG albedo is sRGB-decoded; PNG normals use the ``(n + 1) / 2`` encoding.
    Normals within 1e-2 of unit length are renormalised. Albedo, roughness
    and metallic values outside [0, 1] are clamped and flagged in ``report``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFileError(directory, "G-buffer directory not found")
    paths = {name: _find_map(directory, name) for name in GBuffer.MAPS}
    K = read_intrinsics(directory / "intrinsics.txt")

    maps = {}
    for name, p in paths.items():
        if name == "albedo" and p.suffix.lower() == ".png":
            maps[name] = load_png(p)
        else:
            maps[name] = _load_data_map(p)
    for name in ("roughness", "metallic", "depth"):
        if maps[name].ndim == 3:
            raise ValidationError(f"{name}: expected a single-channel map ({paths[name].name})")
    if maps["albedo"].ndim == 2:
        maps["albedo"] = np.repeat(maps["albedo"][..., None], 3, axis=2)

    shapes = {name: m.shape[:2] for name, m in maps.items()}
    ref = shapes["albedo"]
    for name, s in shapes.items():
        if s != ref:
            raise DimensionMismatchError(
                f"dimension mismatch: albedo is {ref[1]}x{ref[0]} but {name} is {s[1]}x{s[0]}"
            )

    for name in ("albedo", "roughness", "metallic"):
        maps[name] = _clamp_unit(maps[name], report, name)

    n = maps["normal"]
    if n.ndim != 3:
        raise ValidationError("normal: expected a 3-channel map")
    if paths["normal"].suffix.lower() == ".png":
        n = n * 2.0 - 1.0
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(np.abs(length - 1.0) > NORMAL_RENORM_TOL):
        raise ValidationError("normal: vectors deviate from unit length by more than 1e-2")
    maps["normal"] = n / length
    return GBuffer(intrinsics=K, **maps)


def save_gbuffer(gbuf: GBuffer, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in GBuffer.MAPS:
        save_pfm(getattr(gbuf, name).astype(np.float32), directory / f"{name}.pfm")
    K = gbuf.intrinsics
    text = " ".join(repr(float(v)) for v in (K[0, 0], K[1, 1], K[0, 2], K[1, 2])) + "\n"
    tmp = directory / "intrinsics.txt.tmp"
    tmp.write_text(text)
    os.replace(tmp, directory / "intrinsics.txt")
