"""Procedural road scenes with exact ground-truth depth and labels.

Geometry is a straight corridor: a flat ground plane (road + sidewalks),
building walls on both sides, a far backdrop, and 0-3 box obstacles. Every
surface is analytic, so depth is exact; appearance carries real monocular
depth cues (world-scale texture, fog) so learned models cannot rely on pixel
position alone. Road decals (painted disks, rings, stripes) vary appearance
without touching labels or depth.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

CLASS_NAMES = ("road", "lane_marking", "sidewalk", "building", "pole", "vehicle")
ROAD, LANE_MARKING, SIDEWALK, BUILDING, POLE, VEHICLE = range(6)
TARGET_CLASSES = (BUILDING, POLE, VEHICLE)


class SceneError(Exception):
    pass


class SceneConfigError(SceneError):
    pass


class SceneIOError(SceneError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float


@dataclass(frozen=True)
class SceneConfig:
    width: int = 256
    height: int = 192
    focal_scale: float = 0.58        # f = focal_scale * width
    horizon_factor: float = 2.4      # c_y = height / horizon_factor
    camera_height: float = 1.0
    # forward camera translation, meters; world content (obstacles, decals,
    # surface texture phase) appears this much closer, so a sweep over
    # increasing values renders an approach sequence with true per-frame depth
    camera_shift: float = 0.0
    road_half_width: float = 2.5
    sidewalk_width: float = 1.5
    backdrop_depth: float = 40.0
    fog_length: float = 22.0
    max_obstacles: int = 3
    decals: bool = True
    decal_range: tuple = (2, 6)
    # obstacles never spawn in this band so road pixels under sampled patch
    # placements stay road
    exclusion_near: float = 1.5
    exclusion_far: float = 3.0
    exclusion_halfwidth: float = 1.0

    def intrinsics(self) -> CameraIntrinsics:
        f = self.focal_scale * self.width
        return CameraIntrinsics(fx=f, fy=f, cx=self.width / 2.0,
                                cy=self.height / self.horizon_factor)

    def validate(self) -> None:
        if self.width < 64 or self.height < 48:
            raise SceneConfigError(f"resolution {self.width}x{self.height} below 64x48")
        if self.camera_height <= 0:
            raise SceneConfigError("camera_height must be positive")
        if not (0.0 <= self.camera_shift < self.backdrop_depth):
            raise SceneConfigError(
                f"camera_shift {self.camera_shift} outside [0, backdrop)")
        cy = self.height / self.horizon_factor
        if not (1.0 <= cy <= self.height - 8):
            raise SceneConfigError(f"horizon row {cy:.1f} outside usable image")


@dataclass
class Scene:
    rgb: np.ndarray          # H,W,3 float32 in [0,1]
    depth: np.ndarray        # H,W float32, meters
    labels: np.ndarray       # H,W uint8
    intrinsics: CameraIntrinsics
    camera_height: float
    seed: int


# ---------------------------------------------------------------------------
# deterministic value noise (integer lattice hash + smooth interpolation)


def _hash01(ix, iy, salt: int):
    x = ix.astype(np.uint32) * np.uint32(374761393)
    y = iy.astype(np.uint32) * np.uint32(668265263)
    h = x + y + np.uint32((salt * 2246822519) & 0xFFFFFFFF)
    h ^= h >> np.uint32(13)
    h *= np.uint32(1274126177)
    h ^= h >> np.uint32(16)
    return h.astype(np.float64) / 4294967295.0


def _value_noise(xa, ya, scale: float, salt: int):
    xs, ys = xa / scale, ya / scale
    x0, y0 = np.floor(xs).astype(np.int64), np.floor(ys).astype(np.int64)
    tx, ty = xs - x0, ys - y0
    tx = tx * tx * (3.0 - 2.0 * tx)
    ty = ty * ty * (3.0 - 2.0 * ty)
    n00 = _hash01(x0, y0, salt)
    n10 = _hash01(x0 + 1, y0, salt)
    n01 = _hash01(x0, y0 + 1, salt)
    n11 = _hash01(x0 + 1, y0 + 1, salt)
    return (n00 * (1 - tx) + n10 * tx) * (1 - ty) + (n01 * (1 - tx) + n11 * tx) * ty


def _fbm(xa, ya, scale: float, salt: int):
    return (0.55 * _value_noise(xa, ya, scale, salt)
            + 0.30 * _value_noise(xa, ya, scale * 0.41, salt + 101)
            + 0.15 * _value_noise(xa, ya, scale * 0.16, salt + 202))


# ---------------------------------------------------------------------------
# rendering


def _box_enter_depth(xd, yd, x0, x1, ytop, ybot, z0, z1):
    """Depth at which rays (xd, yd, 1) enter the axis-aligned box, inf on miss."""
    eps = 1e-12
    xs = np.where(np.abs(xd) < eps, eps, xd)
    ys = np.where(np.abs(yd) < eps, eps, yd)
    tx1, tx2 = x0 / xs, x1 / xs
    ty1, ty2 = ytop / ys, ybot / ys
    t_enter = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
    t_enter = np.maximum(t_enter, z0)
    t_exit = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
    t_exit = np.minimum(t_exit, z1)
    hit = (t_enter <= t_exit) & (t_enter > 0.1)
    return np.where(hit, t_enter, np.inf)


_CAR_PALETTE = np.array([
    [0.55, 0.10, 0.10], [0.12, 0.20, 0.50], [0.78, 0.78, 0.78],
    [0.12, 0.12, 0.14], [0.50, 0.52, 0.55], [0.60, 0.45, 0.15],
])


def render_scene(seed: int, config: SceneConfig = SceneConfig()) -> Scene:
    """Deterministic scene for (seed, config)."""
    config.validate()
    rng = np.random.default_rng(seed)
    intr = config.intrinsics()
    h_cam = config.camera_height
    H, W = config.height, config.width
    wall_lat = config.road_half_width + config.sidewalk_width
    z_far = config.backdrop_depth
    shift = config.camera_shift   # camera z in world coords
    salt = (seed * 1000003) & 0x7FFFFFFF

    # per-scene appearance draws (fixed order for determinism)
    illum = rng.uniform(0.9, 1.1)
    dash_phase = rng.uniform(0.0, 4.0)
    road_tone = rng.uniform(0.9, 1.1)

    xd = (np.arange(W, dtype=np.float64) - intr.cx) / intr.fx
    yd = (np.arange(H, dtype=np.float64) - intr.cy) / intr.fy
    XD = np.broadcast_to(xd[None, :], (H, W))
    YD = np.broadcast_to(yd[:, None], (H, W))

    GROUND, WALL_L, WALL_R, BACKDROP = 0, 1, 2, 3
    depth = np.full((H, W), np.inf)
    sid = np.full((H, W), BACKDROP, dtype=np.int32)

    zg = np.where(YD > 1e-9, h_cam / np.where(YD > 1e-9, YD, 1.0), np.inf)
    zg_s = np.where(np.isfinite(zg), zg, 0.0)  # inf above the horizon
    lat_g = zg_s * XD
    ground_ok = np.isfinite(zg) & (np.abs(lat_g) <= wall_lat) & (zg <= z_far)
    depth = np.where(ground_ok, zg, depth)
    sid = np.where(ground_ok, GROUND, sid)

    # side walls (x = +-wall_lat) with banded height for a skyline
    for side, code in ((-1.0, WALL_L), (1.0, WALL_R)):
        facing = XD * side > 1e-9
        zw = np.where(facing, wall_lat / np.where(facing, np.abs(XD), 1.0), np.inf)
        zw_s = np.where(facing, zw, 0.0)
        y_at = zw_s * YD
        band = np.floor((zw_s + shift) / 5.0).astype(np.int64)
        wall_h = 3.0 + 3.0 * _hash01(band, np.full_like(band, int(side > 0)), salt + 7)
        ok = facing & (zw < depth) & (zw <= z_far) & (y_at >= h_cam - wall_h)
        depth = np.where(ok, zw, depth)
        sid = np.where(ok, code, sid)

    # obstacles: boxes standing on the ground, clear of the placement band
    boxes = []
    n_obs = int(rng.integers(0, config.max_obstacles + 1))
    n_vehicles = 0
    for _ in range(n_obs):
        want_vehicle = rng.uniform() < 0.55 and n_vehicles < 2
        if want_vehicle:
            n_vehicles += 1
            width = rng.uniform(1.5, 1.9)
            height = rng.uniform(1.2, 1.5)
            length = rng.uniform(3.2, 4.4)
            lat_c = rng.uniform(-1.8, 1.8)
            z0 = rng.uniform(max(4.0, config.exclusion_far + 1.0), 11.0)
            color = _CAR_PALETTE[int(rng.integers(len(_CAR_PALETTE)))] \
                * rng.uniform(0.85, 1.15)
            boxes.append(dict(x0=lat_c - width / 2, x1=lat_c + width / 2,
                              ytop=h_cam - height, ybot=h_cam,
                              z0=z0, z1=z0 + length, label=VEHICLE,
                              color=np.clip(color, 0.05, 0.95), hgt=height))
        else:
            width = rng.uniform(0.10, 0.20)
            height = rng.uniform(2.5, 4.0)
            side = 1.0 if rng.uniform() < 0.5 else -1.0
            lat_c = side * rng.uniform(config.road_half_width + 0.3,
                                       wall_lat - 0.3)
            z0 = rng.uniform(3.5, 14.0)
            boxes.append(dict(x0=lat_c - width / 2, x1=lat_c + width / 2,
                              ytop=h_cam - height, ybot=h_cam,
                              z0=z0, z1=z0 + width, label=POLE,
                              color=np.array([0.18, 0.18, 0.20]), hgt=height))
    for i, box in enumerate(boxes):
        bz0, bz1 = box["z0"] - shift, box["z1"] - shift
        if bz0 < 0.2:        # box reached or passed the camera
            continue
        t = _box_enter_depth(XD, YD, box["x0"], box["x1"], box["ytop"],
                             box["ybot"], bz0, bz1)
        closer = t < depth
        depth = np.where(closer, t, depth)
        sid = np.where(closer, 10 + i, sid)

    depth = np.where(np.isfinite(depth), depth, z_far)

    # labels
    labels = np.full((H, W), BUILDING, dtype=np.uint8)
    g = sid == GROUND
    labels[g & (np.abs(lat_g) > config.road_half_width)] = SIDEWALK
    labels[g & (np.abs(lat_g) <= config.road_half_width)] = ROAD
    # dashed lines at +-1.25 m, solid edge lines at +-2.3 m
    dashed = (np.abs(np.abs(lat_g) - 1.25) <= 0.06) \
        & (np.mod(zg_s + shift + dash_phase, 4.0) < 2.2)
    solid = np.abs(np.abs(lat_g) - 2.30) <= 0.06
    marking = g & (dashed | solid)
    labels[marking] = LANE_MARKING
    for i, box in enumerate(boxes):
        labels[sid == 10 + i] = box["label"]

    # base colors; noise is evaluated only at the pixels of each region
    rgb = np.zeros((H, W, 3))
    gi = np.where(g)
    zgi, lati = zg_s[gi] + shift, lat_g[gi]
    asphalt = 0.27 + 0.13 * _fbm(zgi, lati, 0.55, salt + 11)
    grain = 0.05 * (_value_noise(zgi, lati, 0.07, salt + 12) - 0.5)
    rgb[gi] = ((asphalt + grain) * road_tone)[:, None] * np.array([0.98, 1.0, 1.02])
    side_band = g & (labels == SIDEWALK)
    si = np.where(side_band)
    zsi = zg_s[si] + shift
    rgb[si] = (0.46 + 0.10 * _fbm(zsi, lat_g[si], 0.4, salt + 13))[:, None] \
        * np.array([1.02, 1.0, 0.95])
    seams = ((np.mod(zsi, 0.75) < 0.05) | (np.mod(np.abs(lat_g[si]), 0.75) < 0.05))
    rgb[si[0][seams], si[1][seams]] *= 0.82
    mi = np.where(marking)
    mark_col = 0.78 + 0.12 * _value_noise(zg_s[mi] + shift, lat_g[mi], 0.2, salt + 14)
    rgb[mi] = mark_col[:, None] * np.array([1.0, 1.0, 0.92])

    for code in (WALL_L, WALL_R):
        wi = np.where(sid == code)
        if not wi[0].size:
            continue
        zw = depth[wi] + shift
        y_at = depth[wi] * YD[wi]
        band = np.floor(zw / 6.0).astype(np.int64)
        base = 0.35 + 0.28 * _hash01(band, np.full_like(band, code), salt + 21)
        win = ((np.mod(zw, 3.0) > 0.8) & (np.mod(zw, 3.0) < 2.3)
               & (np.mod(h_cam - y_at, 2.4) > 0.9)
               & (np.mod(h_cam - y_at, 2.4) < 1.8))
        shade = np.where(win, 0.35, 1.0) * base
        rgb[wi] = shade[:, None] * np.array([1.04, 1.0, 0.96])

    for i, box in enumerate(boxes):
        bi = np.where(sid == 10 + i)
        if not bi[0].size:
            continue
        zb = depth[bi]
        y_hit = zb * YD[bi]
        rise = np.clip((h_cam - y_hit) / box["hgt"], 0.0, 1.0)
        shade = 0.75 + 0.45 * rise
        nz = 1.0 + 0.15 * (_value_noise(zb, y_hit * 7.0, 0.5, salt + 31 + i) - 0.5)
        rgb[bi] = (shade * nz)[:, None] * box["color"][None, :]

    # painted road decals: appearance only, labels and depth untouched
    if config.decals:
        lo, hi = config.decal_range
        n_dec = int(rng.integers(lo, hi + 1))
        ri = np.where(labels == ROAD)
        dz_all, dl_all = zg_s[ri] + shift, lat_g[ri]
        for k in range(n_dec):
            kind = int(rng.integers(0, 4))
            fwd_c = rng.uniform(1.2, 14.0)
            lat_c = rng.uniform(-config.road_half_width + 0.4,
                                config.road_half_width - 0.4)
            size = rng.uniform(0.15, 0.5)
            tone = rng.uniform(0.08, 0.75)
            tint = 1.0 + 0.25 * (rng.uniform(size=3) - 0.5)
            dz, dl = dz_all - fwd_c, dl_all - lat_c
            rim = np.zeros(dz.shape, dtype=bool)
            if kind == 0:      # disk with darker rim
                r = np.hypot(dz, dl)
                region = r < size
                rim = (r >= size * 0.72) & region
            elif kind == 1:    # ring
                r = np.hypot(dz, dl)
                region = (r < size) & (r >= size * 0.55)
            elif kind == 2:    # noise tile
                region = (np.abs(dz) < size) & (np.abs(dl) < size * rng.uniform(0.4, 1.0))
            else:              # stripe along the road
                region = (np.abs(dl) < 0.5 * size) & (np.abs(dz) < size * 3.0)
            sel = np.where(region)[0]
            if not sel.size:
                continue
            tex = tone * (0.8 + 0.4 * _fbm(dz[sel], dl[sel], 0.11, salt + 41 + k))
            tex = tex * np.where(rim[sel], 0.55, 1.0)
            rgb[ri[0][sel], ri[1][sel]] = tex[:, None] * tint[None, :]

    # fog toward the horizon sky tone, then a sky gradient on the backdrop
    sky_top = np.array([0.62, 0.68, 0.78])
    sky_hor = np.array([0.84, 0.855, 0.87])
    vfrac = np.clip((np.arange(H, dtype=np.float64) / max(intr.cy, 1.0)), 0, 1)[:, None]
    back = sid == BACKDROP
    for c in range(3):
        grad = sky_top[c] * (1 - vfrac) + sky_hor[c] * vfrac
        rgb[..., c] = np.where(back, grad, rgb[..., c])
    fog = np.exp(-depth / config.fog_length)
    fog = np.where(back, 1.0, fog)  # backdrop already carries the sky tone
    rgb = rgb * fog[..., None] + sky_hor[None, None, :] * (1.0 - fog[..., None])

    rgb = np.clip(rgb * illum, 0.0, 1.0)
    return Scene(rgb=rgb.astype(np.float32), depth=depth.astype(np.float32),
                 labels=labels, intrinsics=intr, camera_height=h_cam, seed=seed)


def generate_dataset(count: int, config: SceneConfig = SceneConfig(),
                     base_seed: int = 0) -> list[Scene]:
    return [render_scene(base_seed + i, config) for i in range(count)]


def split_dataset(items, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Disjoint shuffle-split; sizes within one of exact proportions."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    a = [items[i] for i in order[:n_train]]
    b = [items[i] for i in order[n_train:n_train + n_val]]
    c = [items[i] for i in order[n_train + n_val:]]
    return a, b, c


# ---------------------------------------------------------------------------
# disk format: scene_%05d/{rgb.png, labels.png, depth.f32, meta.json}


def scene_dir_name(index: int) -> str:
    return f"scene_{index:05d}"


def save_scene(scene: Scene, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    rgb8 = np.clip(np.round(scene.rgb * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb8).save(os.path.join(path, "rgb.png"))
    Image.fromarray(scene.labels, mode="L").save(os.path.join(path, "labels.png"))
    scene.depth.astype("<f4").tofile(os.path.join(path, "depth.f32"))
    meta = dict(fx=scene.intrinsics.fx, fy=scene.intrinsics.fy,
                cx=scene.intrinsics.cx, cy=scene.intrinsics.cy,
                height_m=scene.camera_height,
                width=int(scene.rgb.shape[1]), height=int(scene.rgb.shape[0]),
                seed=int(scene.seed), class_table=list(CLASS_NAMES))
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, indent=1)


def load_scene(path: str) -> Scene:
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise SceneIOError(f"{meta_path}: missing") from None
    except json.JSONDecodeError as e:
        raise SceneIOError(f"{meta_path}: invalid JSON ({e})") from None
    for key in ("fx", "fy", "cx", "cy", "height_m", "width", "height", "seed"):
        if key not in meta:
            raise SceneIOError(f"{meta_path}: missing field {key!r}")
        if not isinstance(meta[key], (int, float)):
            raise SceneIOError(f"{meta_path}: field {key!r} is not a number")
    w, h = int(meta["width"]), int(meta["height"])

    rgb_path = os.path.join(path, "rgb.png")
    try:
        rgb = np.asarray(Image.open(rgb_path).convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise SceneIOError(f"{rgb_path}: missing") from None
    except Exception as e:
        raise SceneIOError(f"{rgb_path}: unreadable image ({e})") from None
    if rgb.shape != (h, w, 3):
        raise SceneIOError(f"{rgb_path}: shape {rgb.shape[:2]} != meta ({h}, {w})")

    lab_path = os.path.join(path, "labels.png")
    try:
        labels = np.asarray(Image.open(lab_path), dtype=np.uint8)
    except FileNotFoundError:
        raise SceneIOError(f"{lab_path}: missing") from None
    except Exception as e:
        raise SceneIOError(f"{lab_path}: unreadable image ({e})") from None
    if labels.shape != (h, w):
        raise SceneIOError(f"{lab_path}: shape {labels.shape} != meta ({h}, {w})")
    if labels.max(initial=0) >= len(CLASS_NAMES):
        raise SceneIOError(f"{lab_path}: label id {int(labels.max())} out of range")

    dep_path = os.path.join(path, "depth.f32")
    try:
        raw = np.fromfile(dep_path, dtype="<f4")
    except FileNotFoundError:
        raise SceneIOError(f"{dep_path}: missing") from None
    if raw.size != h * w:
        raise SceneIOError(f"{dep_path}: expected {h * w} floats, got {raw.size}")
    depth = raw.reshape(h, w)
    if not np.all(np.isfinite(depth)) or depth.min() <= 0:
        raise SceneIOError(f"{dep_path}: depth must be finite and positive")

    intr = CameraIntrinsics(fx=float(meta["fx"]), fy=float(meta["fy"]),
                            cx=float(meta["cx"]), cy=float(meta["cy"]))
    return Scene(rgb=rgb, depth=depth, labels=labels, intrinsics=intr,
                 camera_height=float(meta["height_m"]), seed=int(meta["seed"]))


def save_dataset(scenes, out_dir: str) -> None:
    for i, scene in enumerate(scenes):
        save_scene(scene, os.path.join(out_dir, scene_dir_name(i)))


def load_dataset(in_dir: str) -> list[Scene]:
    names = sorted(d for d in os.listdir(in_dir) if d.startswith("scene_"))
    if not names:
        raise SceneIOError(f"{in_dir}: no scene_* directories")
    return [load_scene(os.path.join(in_dir, d)) for d in names]
