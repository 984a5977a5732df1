"""Reviewable image artifacts: prediction panels, heatmaps, filmstrips."""

import numpy as np
from PIL import Image

# perceptually-uniform ramp (dark violet -> teal -> yellow), 17 anchors
_RAMP = np.array([
    (68, 1, 84), (72, 26, 108), (71, 47, 125), (65, 68, 135),
    (57, 86, 140), (49, 104, 142), (42, 120, 142), (35, 136, 142),
    (31, 152, 139), (34, 168, 132), (53, 183, 121), (84, 197, 104),
    (122, 209, 81), (165, 219, 54), (210, 226, 27), (238, 229, 28),
    (253, 231, 37)], dtype=np.float64)

# fixed per-class palette, indexed by label id (see README for the table)
CLASS_PALETTE = np.array([
    (128, 64, 128),    # road
    (255, 255, 0),     # lane_marking
    (244, 35, 232),    # sidewalk
    (70, 70, 70),      # building
    (153, 153, 153),   # pole
    (0, 0, 142),       # vehicle
], dtype=np.uint8)

_GAP = 2           # pixels between panels
_NAN_GRAY = 110


def _lut() -> np.ndarray:
    xs = np.linspace(0.0, 1.0, len(_RAMP))
    grid = np.linspace(0.0, 1.0, 256)
    return np.stack([np.interp(grid, xs, _RAMP[:, c]) for c in range(3)],
                    axis=1).round().astype(np.uint8)


_LUT = _lut()


def colorize(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Scalar field to ramp colors; NaN renders gray."""
    v = np.asarray(values, dtype=np.float64)
    span = max(vmax - vmin, 1e-12)
    idx = np.clip((v - vmin) / span, 0.0, 1.0)
    out = _LUT[np.nan_to_num(idx * 255.0).astype(np.int64).clip(0, 255)]
    out[~np.isfinite(v)] = _NAN_GRAY
    return out


def colorize_labels(labels: np.ndarray) -> np.ndarray:
    lab = np.asarray(labels).astype(np.int64)
    if lab.min() < 0 or lab.max() >= len(CLASS_PALETTE):
        raise ValueError(f"label id outside palette: {lab.min()}..{lab.max()}")
    return CLASS_PALETTE[lab]


def to_u8(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def mask_outline(rgb_u8: np.ndarray, mask: np.ndarray,
                 color=(255, 40, 40)) -> np.ndarray:
    """Copy of the image with the mask boundary drawn on top."""
    m = np.asarray(mask) > 0.5
    interior = np.ones_like(m)
    interior[1:, :] &= m[:-1, :]
    interior[:-1, :] &= m[1:, :]
    interior[:, 1:] &= m[:, :-1]
    interior[:, :-1] &= m[:, 1:]
    edge = m & ~interior
    out = rgb_u8.copy()
    out[edge] = color
    return out


def panel_grid(rows: list[list[np.ndarray]], pad: int = _GAP) -> np.ndarray:
    h, w, _ = rows[0][0].shape
    ncols = len(rows[0])
    grid = np.full((len(rows) * h + (len(rows) - 1) * pad,
                    ncols * w + (ncols - 1) * pad, 3), 255, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            if cell.shape != (h, w, 3):
                raise ValueError(f"panel {i},{j} shape {cell.shape} != {(h, w, 3)}")
            grid[i * (h + pad):i * (h + pad) + h,
                 j * (w + pad):j * (w + pad) + w] = cell
    return grid


def prediction_panel(clean_rgb, adv_rgb, disp_clean, disp_adv,
                     labels_clean, labels_adv, mask) -> np.ndarray:
    """Two rows (clean / adversarial) x three columns (RGB, disparity, labels)."""
    top = [to_u8(clean_rgb), colorize(disp_clean, 0.0, 1.0),
           colorize_labels(labels_clean)]
    bottom = [mask_outline(to_u8(adv_rgb), mask), colorize(disp_adv, 0.0, 1.0),
              colorize_labels(labels_adv)]
    return panel_grid([top, bottom])


def heatmap(values: np.ndarray, vmin: float, vmax: float,
            cell: int = 48) -> np.ndarray:
    """Grid of metric cells scaled up; rows y-axis, columns x-axis."""
    colored = colorize(values, vmin, vmax)
    big = np.kron(colored, np.ones((cell, cell, 1), dtype=np.uint8))
    big[::cell, :, :] = 255
    big[:, ::cell, :] = 255
    return big


def filmstrip(frames: list[np.ndarray], pad: int = _GAP) -> np.ndarray:
    return panel_grid([frames], pad=pad)


def save_png(arr: np.ndarray, path) -> None:
    Image.fromarray(arr).save(path)
