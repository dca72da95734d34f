"""Episode I/O and augmentation: relighting, colour degradation and texture swaps.

An episode directory holds ``frames/%06d.png``, ``proprio.csv`` and
``actions.csv`` (comma-separated decimals, one row per frame, no header) and
``meta.txt`` (``key=value`` lines). Augmentations rewrite frames only;
proprioception and actions are passed through untouched.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envmap import EnvironmentMap
from .errors import DimensionMismatchError, MalformedFileError, MissingFileError, RelightError, ValidationError
from .imagery import GBuffer, check_image, load_png, save_png, srgb_decode, srgb_encode
from .metrics import LUMA_709
from .optimize import EnvEstimateConfig, RefineConfig, estimate_envmap, refine_properties
from .relight import RenderSettings, relight_frame
from .temporal import propagate, quotient_map

log = logging.getLogger(__name__)

JITTER_SCALE_RANGE = (0.2, 1.9)
JITTER_HUE_RANGE = (-0.5, 0.5)
_FRAME_RE = re.compile(r"^(\d{6})\.png$")


@dataclass(eq=False)
class Episode:
    frames: list[np.ndarray]
    proprio: np.ndarray
    actions: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ValidationError("episode has no frames")
        self.frames = [check_image(f, f"frame {t}", nonnegative=True) for t, f in enumerate(self.frames)]
        shape = self.frames[0].shape
        for t, f in enumerate(self.frames):
            if f.shape != shape:
                raise DimensionMismatchError(f"frame {t} has shape {f.shape}, frame 0 has {shape}")
        self.proprio = _as_table(self.proprio, "proprio")
        self.actions = _as_table(self.actions, "actions")
        T = len(self.frames)
        for name, table in (("proprio", self.proprio), ("actions", self.actions)):
            if table.shape[0] != T:
                raise ValidationError(f"{name} has {table.shape[0]} rows but the episode has {T} frames")

    @property
    def length(self) -> int:
        return len(self.frames)

    def with_frames(self, frames, **meta) -> Episode:
        """Same proprio/actions arrays, new frames and extra metadata."""
        return Episode(list(frames), self.proprio.copy(), self.actions.copy(), {**self.meta, **{k: str(v) for k, v in meta.items()}})


def _as_table(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValidationError(f"{name} must be a T x n table")
    return a


# ---------------------------------------------------------------------------
# storage


def read_csv_table(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "missing table")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise MalformedFileError(path, f"line {lineno}: not a comma-separated list of numbers") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise MalformedFileError(path, "rows have differing column counts")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)


def write_csv_table(table, path) -> None:
    # repr gives the shortest string that parses back to the same double
    text = "".join(",".join(repr(float(v)) for v in row) + "\n" for row in np.asarray(table))
    _atomic_write(Path(path), text)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_meta(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "missing meta.txt")
    meta = {}
    for line in path.read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MalformedFileError(path, f"expected key=value, got {line!r}")
        meta[key.strip()] = value.strip()
    return meta


def load_episode(directory) -> Episode:
    directory = Path(directory)
    frame_dir = directory / "frames"
    if not frame_dir.is_dir():
        raise MissingFileError(frame_dir, "missing frames directory")
    names = sorted(p.name for p in frame_dir.iterdir() if _FRAME_RE.match(p.name))
    if not names:
        raise MissingFileError(frame_dir, "no frames/%06d.png files")
    for t, name in enumerate(names):
        if int(_FRAME_RE.match(name).group(1)) != t:
            raise MalformedFileError(frame_dir / name, f"frame numbering has a gap before index {t}")
    frames = [load_png(frame_dir / n) for n in names]
    proprio = read_csv_table(directory / "proprio.csv")
    actions = read_csv_table(directory / "actions.csv")
    meta = read_meta(directory / "meta.txt")
    return Episode(frames, proprio, actions, meta)


def save_episode(ep: Episode, directory) -> None:
    directory = Path(directory)
    frame_dir = directory / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(ep.frames):
        save_png(f, frame_dir / f"{t:06d}.png")
    write_csv_table(ep.proprio, directory / "proprio.csv")
    write_csv_table(ep.actions, directory / "actions.csv")
    _atomic_write(directory / "meta.txt", "".join(f"{k}={v}\n" for k, v in ep.meta.items()))


# ---------------------------------------------------------------------------
# colour degradation


@dataclass(frozen=True)
class JitterParams:
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        lo, hi = JITTER_SCALE_RANGE
        for name in ("brightness", "contrast", "saturation"):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValidationError(f"{name}={v} outside [{lo}, {hi}]")
        if not JITTER_HUE_RANGE[0] <= self.hue <= JITTER_HUE_RANGE[1]:
            raise ValidationError(f"hue={self.hue} outside [-0.5, 0.5]")

    @classmethod
    def sample(cls, seed: int) -> JitterParams:
        rng = np.random.default_rng(seed)
        b, c, s = rng.uniform(*JITTER_SCALE_RANGE, size=3)
        return cls(float(b), float(c), float(s), float(rng.uniform(*JITTER_HUE_RANGE)), seed)


def rgb_to_hsv(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    d = mx - mn
    safe = np.where(d > 0, d, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0, np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(d > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv):
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    h6 = h * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros(hsv.shape)
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def jitter_srgb(x, params: JitterParams) -> np.ndarray:
    """Apply brightness, contrast, saturation and hue (in that order) to an sRGB-encoded image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = np.repeat(x[..., None], 3, axis=2)
    x = np.clip(x * params.brightness, 0.0, 1.0)
    mean_luma = float(np.mean(x @ LUMA_709))
    x = np.clip((x - mean_luma) * params.contrast + mean_luma, 0.0, 1.0)
    luma = (x @ LUMA_709)[..., None]
    x = np.clip(luma + params.saturation * (x - luma), 0.0, 1.0)
    if params.hue != 0.0:
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + params.hue) % 1.0
        x = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return x


def degrade_frame(frame, params: JitterParams) -> np.ndarray:
    """Linear frame in, linear frame out; the jitter itself runs on display values."""
    return srgb_decode(jitter_srgb(srgb_encode(np.clip(frame, 0.0, 1.0)), params))


def degrade_episode(ep: Episode, params: JitterParams) -> Episode:
    """One parameter draw for the whole episode, applied identically to every frame."""
    frames = [degrade_frame(f, params) for f in ep.frames]
    return ep.with_frames(frames, degrade_brightness=params.brightness, degrade_contrast=params.contrast,
                          degrade_saturation=params.saturation, degrade_hue=params.hue)


# ---------------------------------------------------------------------------
# texture swap


def swap_albedo(gbuf: GBuffer, segment_mask, new_albedo) -> GBuffer:
    """Replace albedo inside ``segment_mask``; every other map is passed through unchanged."""
    mask = np.asarray(segment_mask)
    if mask.shape != gbuf.shape:
        raise DimensionMismatchError(f"mask is {mask.shape[1]}x{mask.shape[0]} but G-buffer is {gbuf.width}x{gbuf.height}")
    mask = mask.astype(bool)
    new = np.asarray(new_albedo, dtype=np.float64)
    if new.shape == (3,) or new.ndim == 0:
        new = np.broadcast_to(new, gbuf.albedo.shape)
    elif new.shape != gbuf.albedo.shape:
        raise DimensionMismatchError(f"new albedo has shape {new.shape}, expected (3,) or {gbuf.albedo.shape}")
    if not np.all(np.isfinite(new)) or new.min() < 0.0 or new.max() > 1.0:
        raise ValidationError("new albedo must lie in [0, 1]")
    if not mask.any():
        return gbuf
    albedo = np.where(mask[..., None], new, gbuf.albedo)
    return gbuf.replace(albedo=albedo)


# ---------------------------------------------------------------------------
# relighting augmentation


@dataclass
class AugmentResult:
    episodes: list[Episode | None]
    failures: dict[int, str]
    gbuffer: GBuffer
    property_estimations: int
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def succeeded(self) -> list[Episode]:
        return [e for e in self.episodes if e is not None]


def prepare_properties(ep: Episode, gbuf: GBuffer, refine: RefineConfig | None, settings: RenderSettings,
                       source_env: EnvironmentMap | None = None,
                       estimate_cfg: EnvEstimateConfig | None = None) -> GBuffer:
    """Refine the G-buffer against frame 0, estimating the original lighting first if it is unknown."""
    if refine is None:
        return gbuf
    frame0 = ep.frames[0]
    if source_env is None:
        source_env = estimate_envmap(gbuf, frame0, estimate_cfg, settings).env
    return refine_properties(gbuf, frame0, source_env, refine, settings).gbuffer


def relight_episode(ep: Episode, gbuf: GBuffer, env: EnvironmentMap, settings: RenderSettings,
                    threads: int | None = None, **meta) -> Episode:
    relit0 = relight_frame(gbuf, env, settings, threads)
    frame0 = ep.frames[0]
    if frame0.ndim == 2:
        relit0 = relit0 @ LUMA_709
    qmap = quotient_map(frame0, relit0)
    return ep.with_frames(propagate(ep.frames, qmap), **meta)


def augment_episode(ep: Episode, gbuf: GBuffer, envs, settings: RenderSettings | None = None,
                    refine: RefineConfig | None = None, threads: int | None = None,
                    source_env: EnvironmentMap | None = None) -> AugmentResult:
    """Relight an episode under each environment, reusing one set of material properties.

    Property refinement (when requested) runs once. A failure under one
    environment is recorded in ``failures`` and leaves ``None`` in its slot.
    """
    settings = settings or RenderSettings()
    envs = list(envs)
    if not envs:
        raise ValidationError("at least one environment map is required")
    if ep.frames[0].shape[:2] != gbuf.shape:
        h, w = ep.frames[0].shape[:2]
        raise DimensionMismatchError(f"frames are {w}x{h} but G-buffer is {gbuf.width}x{gbuf.height}")
    timings = {}
    t0 = time.perf_counter()
    props = prepare_properties(ep, gbuf, refine, settings, source_env)
    timings["properties"] = time.perf_counter() - t0
    episodes: list[Episode | None] = []
    failures: dict[int, str] = {}
    for i, env in enumerate(envs):
        t1 = time.perf_counter()
        try:
            episodes.append(relight_episode(ep, props, env, settings, threads, env_index=i, seed=settings.seed))
        except RelightError as e:
            log.warning("environment %d failed: %s", i, e)
            failures[i] = str(e)
            episodes.append(None)
        timings[f"env_{i}"] = time.perf_counter() - t1
    return AugmentResult(episodes, failures, props, int(refine is not None), timings)
