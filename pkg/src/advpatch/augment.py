"""Texture and final-image augmentation for transform-robust optimization.

The texture pass applies sampled flips and right-angle rotations (exact on a
square texture, no resampling) followed by brightness/contrast; the final
pass applies brightness/contrast to the whole composited image. Both remain
differentiable wrt the texture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


class AugmentError(Exception):
    pass


@dataclass(frozen=True)
class AugmentParams:
    """Sampling caps, plus optional forced values for any component.

    A forced field (non-None) skips its random draw: handy for identity
    checks and for the no-augmentation ablations.
    """
    brightness_max: float = 0.2
    contrast_max: float = 0.1
    flip_h: bool | None = None
    flip_v: bool | None = None
    rotation: int | None = None      # degrees, multiple of 90
    brightness: float | None = None
    contrast: float | None = None

    def __post_init__(self):
        if self.brightness_max < 0 or self.contrast_max < 0:
            raise AugmentError("augmentation magnitudes must be >= 0")
        if self.rotation is not None and self.rotation % 360 not in (0, 90, 180, 270):
            raise AugmentError(f"rotation {self.rotation} not a right angle")


def _rot90(t: dc.Tensor) -> dc.Tensor:
    # counterclockwise quarter turn of an HWC tensor
    return dc.flip(dc.transpose(t, (1, 0, 2)), axis=0)


def _photometric(t: dc.Tensor, b: float, c: float) -> dc.Tensor:
    if b == 0.0 and c == 0.0:
        return t  # exact identity, no float round-trip
    shifted = dc.add(dc.mul(dc.sub(t, 0.5), 1.0 + c), 0.5 + b)
    return dc.clamp(shifted, 0.0, 1.0)


def texture_augment(theta, params: AugmentParams, rng: np.random.Generator) -> dc.Tensor:
    """Sampled flip/rotation then brightness/contrast; differentiable wrt theta."""
    theta = dc.as_tensor(theta)
    if theta.ndim != 3 or theta.shape[0] != theta.shape[1]:
        raise AugmentError(f"texture must be square HWC, got {theta.shape}")
    fh = params.flip_h if params.flip_h is not None else bool(rng.integers(0, 2))
    fv = params.flip_v if params.flip_v is not None else bool(rng.integers(0, 2))
    rot = params.rotation if params.rotation is not None \
        else 90 * int(rng.integers(0, 4))
    b = params.brightness if params.brightness is not None \
        else float(rng.uniform(-params.brightness_max, params.brightness_max))
    c = params.contrast if params.contrast is not None \
        else float(rng.uniform(-params.contrast_max, params.contrast_max))

    out = theta
    if fh:
        out = dc.flip(out, axis=1)
    if fv:
        out = dc.flip(out, axis=0)
    for _ in range((rot % 360) // 90):
        out = _rot90(out)
    return _photometric(out, b, c)


def final_augment(x, params: AugmentParams, rng: np.random.Generator) -> dc.Tensor:
    """Brightness/contrast on the composited image (photometric only)."""
    x = dc.as_tensor(x)
    b = params.brightness if params.brightness is not None \
        else float(rng.uniform(-params.brightness_max, params.brightness_max))
    c = params.contrast if params.contrast is not None \
        else float(rng.uniform(-params.contrast_max, params.contrast_max))
    return _photometric(x, b, c)
