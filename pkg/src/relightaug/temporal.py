"""Quotient-image propagation of a relit first frame across a sequence.

With a static camera and no visibility term, relighting a pixel multiplies
its radiance by a fixed per-channel factor. That factor is estimated once
from frame 0 and its relit version, then applied to every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .imagery import check_image


@dataclass(frozen=True, eq=False)
class QuotientMap:
    gain: np.ndarray
    epsilon: float = 1e-3
    gain_max: float = 8.0

    def __post_init__(self):
        g = np.asarray(self.gain, dtype=np.float64)
        if not np.all(np.isfinite(g)) or g.min(initial=0.0) < 0.0 or g.max(initial=0.0) > self.gain_max:
            raise ValidationError("gain must be finite and within [0, gain_max]")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.gain.shape


def quotient_map(I0, I0_star, epsilon: float = 1e-3, gain_max: float = 8.0) -> QuotientMap:
    """``gain = clip((I0* + eps) / (I0 + eps), 0, gain_max)`` per pixel and channel."""
    if not epsilon > 0 or not gain_max > 0:
        raise ValidationError("epsilon and gain_max must be positive")
    I0 = check_image(I0, "I0", nonnegative=True)
    I0_star = check_image(I0_star, "I0_star", nonnegative=True)
    if I0.shape != I0_star.shape:
        raise DimensionMismatchError(f"I0 is {I0.shape} but I0_star is {I0_star.shape}")
    gain = np.clip((I0_star + epsilon) / (I0 + epsilon), 0.0, gain_max)
    gain.flags.writeable = False
    return QuotientMap(gain, float(epsilon), float(gain_max))


def apply_gain(frame, qmap: QuotientMap, index: int = 0) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != qmap.shape:
        raise DimensionMismatchError(f"frame {index} has shape {frame.shape}, quotient map has {qmap.shape}")
    return qmap.gain * frame


def propagate(frames, qmap: QuotientMap) -> list[np.ndarray]:
    """Multiply every frame by the gain. Frame ``t`` of the output depends only on frame ``t``."""
    return [apply_gain(f, qmap, t) for t, f in enumerate(frames)]
