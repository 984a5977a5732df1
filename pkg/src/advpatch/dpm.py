"""Ground-plane texture projection and compositing.

The mapper backprojects each pixel through the pinhole model to metric
surface coordinates, tiles the texture over the ground with modular
arithmetic, and produces a mapped texture image plus a binary mask for the
single tile anchored at the placement offset. Geometry is constant wrt the
texture, so gradients flow only through the texel gather.

A homography-based paste (`perspective_place`) provides the geometry-free
baseline used by ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .scenegen import CameraIntrinsics


class DpmError(Exception):
    pass


@dataclass(frozen=True)
class PlacementParams:
    offset: tuple          # (forward_m, lateral_m)
    scale: float = 0.4     # tile side length, meters
    resolution: int = 64   # texels per side

    def __post_init__(self):
        if self.scale <= 0:
            raise DpmError(f"texture scale must be positive, got {self.scale}")
        if self.resolution < 2:
            raise DpmError(f"texture resolution must be >= 2, got {self.resolution}")


@dataclass
class SurfaceCoords:
    forward: np.ndarray    # H,W meters (equals depth)
    lateral: np.ndarray    # H,W meters, positive right
    vertical: np.ndarray   # H,W meters, positive down (ground ~ camera height)


@dataclass
class PlacedPatch:
    mapped: dc.Tensor      # H,W,3 texture image (meaningful under the mask)
    mask: np.ndarray       # H,W float {0,1}


def surface_coords(depth: np.ndarray, intr: CameraIntrinsics) -> SurfaceCoords:
    if np.any(depth <= 0):
        raise DpmError("depth must be positive everywhere")
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    depth = depth.astype(np.float64)
    return SurfaceCoords(
        forward=depth,
        lateral=depth * (u - intr.cx) / intr.fx,
        vertical=depth * (v - intr.cy) / intr.fy,
    )


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # platform-stable round half away from zero (x is nonnegative here)
    return np.floor(x + 0.5)


def placement_mask(sc: SurfaceCoords, p: PlacementParams,
                   camera_height: float | None = None,
                   vertical_band: float | None = 0.05) -> np.ndarray:
    """Binary mask of the single tile anchored at the offset.

    Pure geometry, no texture involved: usable to pre-check a sampled
    placement before building any differentiable ops.
    """
    fwd_off, lat_off = float(p.offset[0]), float(p.offset[1])
    mask = ((sc.forward > fwd_off) & (sc.forward < fwd_off + p.scale)
            & (sc.lateral > lat_off) & (sc.lateral < lat_off + p.scale))
    if vertical_band is not None:
        if camera_height is None:
            raise DpmError("vertical_band requires camera_height")
        mask &= np.abs(sc.vertical - camera_height) < vertical_band
    return mask.astype(np.float64)


def planar_map(sc: SurfaceCoords, theta: dc.Tensor, p: PlacementParams,
               camera_height: float | None = None,
               vertical_band: float | None = 0.05) -> PlacedPatch:
    """Tile `theta` over the ground plane and mask one tile at the offset.

    UV indices come from normalized modular coordinates; the mask takes
    pixels whose (forward, lateral) lie strictly inside the anchored tile.
    `vertical_band` additionally requires |vertical - camera_height| to be
    small so wall and obstacle pixels sharing the tile's forward/lateral
    ranges are excluded; pass None to apply the pure two-coordinate rule.
    """
    theta = dc.as_tensor(theta)
    r = p.resolution
    if theta.shape != (r, r, 3):
        raise DpmError(f"texture shape {theta.shape} != ({r}, {r}, 3)")
    fwd_off, lat_off = float(p.offset[0]), float(p.offset[1])

    norm_f = np.mod(sc.forward - fwd_off, p.scale) / p.scale
    norm_l = np.mod(sc.lateral - lat_off, p.scale) / p.scale
    u_idx = np.minimum(_round_half_up(norm_f * r), r - 1).astype(np.int64)
    v_idx = np.minimum(_round_half_up(norm_l * r), r - 1).astype(np.int64)

    mask = placement_mask(sc, p, camera_height, vertical_band)
    mapped = dc.gather2d(theta, u_idx, v_idx)
    return PlacedPatch(mapped=mapped, mask=mask)


def composite(x, placed: PlacedPatch) -> dc.Tensor:
    """x' = x * (1 - m) + M * m, with gradients confined to masked pixels."""
    x = dc.as_tensor(x)
    if x.shape != placed.mapped.shape:
        raise DpmError(f"image shape {x.shape} != mapped {placed.mapped.shape}")
    m = placed.mask[..., None]
    return dc.add(dc.mul(x, dc.Tensor(1.0 - m)), dc.mul(placed.mapped, dc.Tensor(m)))


# ---------------------------------------------------------------------------
# perspective-paste baseline (replaces the ground-plane geometry)


def _homography_from_quad(r: int, quad: np.ndarray) -> np.ndarray:
    """3x3 map from texture corners (0,0),(r,0),(r,r),(0,r) to quad (x, y)."""
    src = np.array([[0, 0], [r, 0], [r, r], [0, r]], dtype=np.float64)
    a_rows, b_vals = [], []
    for (sx, sy), (dx, dy) in zip(src, quad):
        a_rows.append([sx, sy, 1, 0, 0, 0, -dx * sx, -dx * sy])
        a_rows.append([0, 0, 0, sx, sy, 1, -dy * sx, -dy * sy])
        b_vals.extend([dx, dy])
    try:
        sol = np.linalg.solve(np.array(a_rows), np.array(b_vals))
    except np.linalg.LinAlgError:
        raise DpmError("degenerate quad: homography is singular") from None
    return np.append(sol, 1.0).reshape(3, 3)


def _quad_convex(quad: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        a, b, c = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        signs.append(np.sign(cross))
    nz = [s for s in signs if s != 0]
    return len(nz) == 4 and all(s == nz[0] for s in nz)


def perspective_place(x, theta: dc.Tensor, quad) -> tuple[dc.Tensor, np.ndarray]:
    """Warp `theta` into the convex image-plane `quad` and composite.

    Bilinear sampling keeps the result differentiable wrt theta. Returns
    (composited image, mask); the mask is the rasterized quad interior.
    """
    x = dc.as_tensor(x)
    theta = dc.as_tensor(theta)
    h, w = x.shape[0], x.shape[1]
    r = theta.shape[0]
    quad = np.asarray(quad, dtype=np.float64)
    if quad.shape != (4, 2):
        raise DpmError(f"quad must be 4 points, got shape {quad.shape}")
    if not _quad_convex(quad):
        raise DpmError("degenerate quad: not strictly convex")
    if (quad[:, 0].min() < -0.5 or quad[:, 0].max() > w - 0.5
            or quad[:, 1].min() < -0.5 or quad[:, 1].max() > h - 0.5):
        raise DpmError("quad extends outside the image")

    hom = _homography_from_quad(r, quad)
    inv = np.linalg.inv(hom)
    us = np.arange(w, dtype=np.float64)[None, :].repeat(h, axis=0)
    vs = np.arange(h, dtype=np.float64)[:, None].repeat(w, axis=1)
    denom = inv[2, 0] * us + inv[2, 1] * vs + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * us + inv[0, 1] * vs + inv[0, 2]) / denom
        sy = (inv[1, 0] * us + inv[1, 1] * vs + inv[1, 2]) / denom
    # pixels on the homography's vanishing line are outside the quad; zero
    # them so the index math below stays in range
    bad = ~(np.isfinite(sx) & np.isfinite(sy))
    sx = np.where(bad, 0.0, sx)
    sy = np.where(bad, 0.0, sy)
    inside = (sx >= 0) & (sx <= r) & (sy >= 0) & (sy <= r) & (denom != 0) & ~bad

    # bilinear gather on texel centers (texture sample at sx - 0.5)
    fx = np.clip(sx - 0.5, 0.0, r - 1.0)
    fy = np.clip(sy - 0.5, 0.0, r - 1.0)
    x0 = np.clip(np.floor(fx).astype(np.int64), 0, r - 2)
    y0 = np.clip(np.floor(fy).astype(np.int64), 0, r - 2)
    wx = (fx - x0)[..., None]
    wy = (fy - y0)[..., None]
    t00 = dc.gather2d(theta, y0, x0)
    t10 = dc.gather2d(theta, y0, x0 + 1)
    t01 = dc.gather2d(theta, y0 + 1, x0)
    t11 = dc.gather2d(theta, y0 + 1, x0 + 1)
    one = dc.Tensor
    top = dc.add(dc.mul(t00, one(1.0 - wx)), dc.mul(t10, one(wx)))
    bot = dc.add(dc.mul(t01, one(1.0 - wx)), dc.mul(t11, one(wx)))
    warped = dc.add(dc.mul(top, one(1.0 - wy)), dc.mul(bot, one(wy)))

    mask = inside.astype(np.float64)
    out = dc.add(dc.mul(x, dc.Tensor(1.0 - mask[..., None])),
                 dc.mul(warped, dc.Tensor(mask[..., None])))
    return out, mask
