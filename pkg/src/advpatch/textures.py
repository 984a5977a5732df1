"""Procedural manhole-style textures.

Used as the content-loss reference set and as the artistic baseline patch.
Each generator is a pure function of resolution, returning HWC float in
[0,1] with the dark iron tones of a street cover.
"""

from __future__ import annotations

import numpy as np


def _grid(res: int):
    c = np.linspace(-1.0, 1.0, res)
    xx, yy = np.meshgrid(c, c)
    return xx, yy, np.hypot(xx, yy), np.arctan2(yy, xx)


def _tint(mono: np.ndarray) -> np.ndarray:
    # slightly warm dark-iron coloring
    return np.clip(np.stack([mono * 1.05, mono, mono * 0.92], axis=-1), 0.0, 1.0)


def concentric_rings(res: int) -> np.ndarray:
    _, _, r, _ = _grid(res)
    mono = np.where(np.mod(r * 4.0, 1.0) < 0.5, 0.22, 0.33)
    mono = np.where(r > 0.82, 0.40, mono)          # outer rim
    mono = np.where(r > 0.97, 0.24, mono)          # square corners
    mono = np.where(r < 0.12, 0.38, mono)          # hub
    return _tint(mono)


def radial_spokes(res: int) -> np.ndarray:
    _, _, r, ang = _grid(res)
    sector = np.mod(np.floor((ang + np.pi) / (2.0 * np.pi / 12.0)), 2.0)
    mono = np.where(sector > 0, 0.21, 0.31)
    mono = np.where(r < 0.18, 0.36, mono)
    mono = np.where(r > 0.82, 0.40, mono)
    mono = np.where(r > 0.97, 0.24, mono)
    return _tint(mono)


def checker_rim(res: int) -> np.ndarray:
    xx, yy, r, _ = _grid(res)
    cell = (np.floor((xx + 1.0) * 4.0) + np.floor((yy + 1.0) * 4.0)) % 2.0
    mono = np.where(cell > 0, 0.19, 0.30)
    mono = np.where((r > 0.78) & (r <= 0.95), 0.37, mono)
    mono = np.where(r > 0.95, 0.24, mono)
    return _tint(mono)


def naive_cover(res: int) -> np.ndarray:
    """Plain dark cover: uniform 0.25 interior with a 0.35 rim ring."""
    _, _, r, _ = _grid(res)
    mono = np.where((r > 0.78) & (r <= 0.97), 0.35, 0.25)
    return np.repeat(mono[:, :, None], 3, axis=2)


def reference_set(res: int) -> list[np.ndarray]:
    return [concentric_rings(res), radial_spokes(res), checker_rim(res)]
