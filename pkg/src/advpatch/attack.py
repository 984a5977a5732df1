"""Texture optimization against frozen depth and segmentation victims.

The optimizer runs stochastic gradient descent (Adam) over a square ground
texture. Every minibatch element draws its own placement and augmentation,
so the texture is trained in expectation over the transform distribution:
texture augmentation, ground-plane projection, compositing, then whole-image
augmentation, through both victims, into the weighted loss.

Victim weights stay frozen; their checksums are recorded and re-verified
after the run. All randomness flows from one seeded generator in a fixed
draw order, which makes runs bit-reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import diffcore as dc
from . import textures
from .augment import AugmentParams, final_augment, texture_augment
from .dpm import (DpmError, PlacementParams, composite, perspective_place,
                  placement_mask, planar_map, surface_coords)
from .losses import (ContentLossConfig, LossWeights, adv_mde_loss,
                     adv_ss_targeted, adv_ss_untargeted, content_loss,
                     total_loss, tv_loss)
from .metrics import format_value
from .optim import AdamState, adam_step
from .scenegen import ROAD, TARGET_CLASSES, Scene
from .victims import MDEModel, SSModel, image_to_batch, predict_disparity, \
    predict_semantics

__all__ = [
    "AttackError", "PlacementSampling", "AttackConfig", "AttackResult",
    "PatchArtifact", "generate_patch", "make_baseline_patch",
    "attack_config_from_dict", "hash_scenes", "adam_step", "AdamState",
]

CURVE_FIELDS = ("epoch", "total", "mde", "ss_untargeted", "ss_targeted",
                "tv", "content")


class AttackError(Exception):
    """Raised on invalid configuration or a diverged/failed optimization."""

    def __init__(self, message: str, last_good_theta: np.ndarray | None = None,
                 diagnostics: dict | None = None):
        super().__init__(message)
        self.last_good_theta = last_good_theta
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class PlacementSampling:
    """Placement distribution: base offset plus uniform jitter, meters.

    The defaults put the tile 1.8 to 2.6 m ahead and roughly centered
    laterally, inside the road band of the default scenes.
    """

    forward_base: float = 1.8
    lateral_base: float = -0.2
    forward_jitter: tuple = (0.0, 0.4)
    lateral_jitter: tuple = (-0.4, 0.4)

    def __post_init__(self):
        for name in ("forward_jitter", "lateral_jitter"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise AttackError(f"{name} range ({lo}, {hi}) is inverted")

    def sample(self, rng: np.random.Generator) -> tuple:
        return (self.forward_base + float(rng.uniform(*self.forward_jitter)),
                self.lateral_base + float(rng.uniform(*self.lateral_jitter)))

    def fixed(self) -> tuple:
        """Jitter-free placement at the center of the sampling box."""
        return (self.forward_base + 0.5 * sum(self.forward_jitter),
                self.lateral_base + 0.5 * sum(self.lateral_jitter))


@dataclass(frozen=True)
class AttackConfig:
    lr: float = 0.01
    batch_size: int = 8
    epochs: int = 25
    t_res: int = 128             # texels per texture side
    t_scale: float = 0.4         # tile side, meters (fixed, not optimized)
    seed: int = 0
    sampling: PlacementSampling = field(default_factory=PlacementSampling)
    augment: AugmentParams = field(default_factory=AugmentParams)
    weights: LossWeights = field(default_factory=LossWeights)
    road_class: int = ROAD
    target_classes: tuple = TARGET_CLASSES
    vertical_band: float | None = 0.05
    content_layer: int = 3
    max_resample: int = 10
    # ablation switches
    use_dpm: bool = True          # False: homography paste instead
    use_texture_augment: bool = True
    use_final_augment: bool = True
    fixed_offset: bool = False    # True: no placement sampling

    def __post_init__(self):
        if self.lr <= 0:
            raise AttackError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise AttackError("batch_size must be >= 1")
        if self.epochs < 1:
            raise AttackError("epochs must be >= 1")
        if self.t_res < 2 or self.t_res % 2:
            raise AttackError("t_res must be an even integer >= 2")
        if self.t_scale <= 0:
            raise AttackError("t_scale must be positive")
        if self.max_resample < 1:
            raise AttackError("max_resample must be >= 1")

    def to_dict(self) -> dict:
        # canonical JSON form (tuples become lists) so a dict that made a
        # round trip through a config file compares equal
        return json.loads(json.dumps(dataclasses.asdict(self)))


def attack_config_from_dict(d: dict) -> AttackConfig:
    """Rebuild an AttackConfig from its JSON form (nested dicts, lists)."""
    d = dict(d)
    unknown = set(d) - {f.name for f in dataclasses.fields(AttackConfig)}
    if unknown:
        raise AttackError(f"unknown attack config keys: {sorted(unknown)}")
    if "sampling" in d:
        s = dict(d["sampling"])
        for key in ("forward_jitter", "lateral_jitter"):
            if key in s:
                s[key] = tuple(s[key])
        d["sampling"] = PlacementSampling(**s)
    if "augment" in d:
        d["augment"] = AugmentParams(**d["augment"])
    if "weights" in d:
        d["weights"] = LossWeights(**d["weights"])
    if "target_classes" in d:
        d["target_classes"] = tuple(d["target_classes"])
    return AttackConfig(**d)


def hash_scenes(scenes) -> str:
    """Order-sensitive content hash of a scene list."""
    h = hashlib.sha256()
    for s in scenes:
        h.update(np.int64(s.seed).tobytes())
        h.update(np.ascontiguousarray(s.rgb).tobytes())
        h.update(np.ascontiguousarray(s.depth).tobytes())
        h.update(np.ascontiguousarray(s.labels).tobytes())
    return h.hexdigest()


def make_baseline_patch(kind: str, res: int, seed: int = 0) -> np.ndarray:
    """Non-optimized comparison texture: 'naive', 'artistic', or 'random'."""
    if kind == "naive":
        return textures.naive_cover(res)
    if kind == "artistic":
        return textures.concentric_rings(res)
    if kind == "random":
        return np.random.default_rng(seed).random((res, res, 3))
    raise AttackError(f"unknown baseline kind {kind!r}")


# ---------------------------------------------------------------------------
# artifact


@dataclass
class PatchArtifact:
    """Optimized texture plus everything needed to reproduce and audit it."""

    theta: np.ndarray            # (R, R, 3) float64 in [0, 1]
    config: dict
    curve: list                  # per-epoch dicts over CURVE_FIELDS
    provenance: dict
    step_log: list = field(default_factory=list, repr=False)  # not persisted

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        png = np.floor(self.theta * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
        Image.fromarray(png).save(out / "texture.png")
        self.theta.astype("<f4").tofile(out / "texture.f32")
        (out / "config.json").write_text(
            json.dumps(self.config, indent=2, sort_keys=True) + "\n")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_FIELDS)
        for row in self.curve:
            writer.writerow([row["epoch"]] + [
                format_value(row[k]) if row.get(k) is not None else ""
                for k in CURVE_FIELDS[1:]])
        (out / "curve.csv").write_text(buf.getvalue())
        (out / "provenance.json").write_text(
            json.dumps(self.provenance, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, out_dir) -> "PatchArtifact":
        out = Path(out_dir)
        config = json.loads((out / "config.json").read_text())
        res = int(config["t_res"])
        raw = np.fromfile(out / "texture.f32", dtype="<f4")
        if raw.size != res * res * 3:
            raise AttackError(
                f"texture.f32 holds {raw.size} values, expected {res * res * 3}")
        theta = raw.reshape(res, res, 3).astype(np.float64)
        curve = []
        with open(out / "curve.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                parsed = {"epoch": int(row["epoch"])}
                for k in CURVE_FIELDS[1:]:
                    parsed[k] = float(row[k]) if row[k] != "" else None
                curve.append(parsed)
        provenance = json.loads((out / "provenance.json").read_text())
        return cls(theta=theta, config=config, curve=curve,
                   provenance=provenance)


@dataclass
class AttackResult:
    artifact: PatchArtifact
    mde_checksum: str
    ss_checksum: str


# ---------------------------------------------------------------------------
# optimization loop


def _corner_quad(scene: Scene, offset, scale: float) -> np.ndarray:
    """Image-plane quad of the ground tile's corners, for the paste baseline.

    Corner order matches the homography's texture corners: columns follow
    lateral position and rows follow forward position, as in the planar map.
    """
    intr = scene.intrinsics
    f0, l0 = float(offset[0]), float(offset[1])
    corners = [(f0, l0), (f0, l0 + scale),
               (f0 + scale, l0 + scale), (f0 + scale, l0)]
    quad = []
    for fwd, lat in corners:
        u = intr.fx * lat / fwd + intr.cx
        v = intr.fy * scene.camera_height / fwd + intr.cy
        quad.append((u, v))
    return np.asarray(quad, dtype=np.float64)


def _draw_placement(scene: Scene, sc, config: AttackConfig,
                    rng: np.random.Generator, where: str):
    """Sample a placement whose tile is visible; retries a bounded number
    of times before giving up (scene content can occlude the band)."""
    if config.fixed_offset:
        offset = config.sampling.fixed()
        if _placement_visible(scene, sc, offset, config):
            return offset
        raise AttackError(
            f"fixed placement {offset} has no visible tile pixels ({where})")
    for _ in range(config.max_resample):
        offset = config.sampling.sample(rng)
        if _placement_visible(scene, sc, offset, config):
            return offset
    raise AttackError(
        f"no visible placement after {config.max_resample} draws ({where})")


def _placement_visible(scene: Scene, sc, offset, config: AttackConfig) -> bool:
    if config.use_dpm:
        p = PlacementParams(offset=offset, scale=config.t_scale,
                            resolution=config.t_res)
        mask = placement_mask(sc, p, camera_height=scene.camera_height,
                              vertical_band=config.vertical_band)
        return bool(mask.sum() > 0)
    quad = _corner_quad(scene, offset, config.t_scale)
    h, w = scene.depth.shape
    inside = (quad[:, 0].min() >= -0.5 and quad[:, 0].max() <= w - 0.5
              and quad[:, 1].min() >= -0.5 and quad[:, 1].max() <= h - 0.5)
    if not inside:
        return False
    # require at least one whole pixel of quad area
    x, y = quad[:, 0], quad[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return area >= 1.0


def _place_element(scene: Scene, sc, texture: dc.Tensor, offset,
                   config: AttackConfig):
    """Project the (augmented) texture into one scene; returns (image, mask)."""
    base = dc.constant(scene.rgb.astype(np.float64))
    if config.use_dpm:
        p = PlacementParams(offset=offset, scale=config.t_scale,
                            resolution=config.t_res)
        placed = planar_map(sc, texture, p, camera_height=scene.camera_height,
                            vertical_band=config.vertical_band)
        return composite(base, placed), placed.mask
    quad = _corner_quad(scene, offset, config.t_scale)
    return perspective_place(base, texture, quad)


def _mean_over(parts: list) -> dc.Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = dc.add(total, p)
    return dc.mul(total, 1.0 / len(parts))


def generate_patch(scenes, mde: MDEModel, ss: SSModel,
                   config: AttackConfig | None = None) -> AttackResult:
    """Optimize a texture against the frozen victims over the given scenes.

    Each epoch shuffles the scene order and walks it in minibatches; each
    minibatch element gets an independent placement and augmentation draw.
    Raises AttackError (with the last finite texture attached) if the loss
    leaves the finite range, and if the final total exceeds the initial one.
    """
    config = config or AttackConfig()
    scenes = list(scenes)
    if not scenes:
        raise AttackError("no scenes to optimize over")
    w = config.weights
    need_mde = w.alpha > 0
    need_ss = w.beta_ua > 0 or w.beta_ta > 0
    if not (need_mde or need_ss or w.gamma > 0 or w.delta > 0):
        raise AttackError("all loss components have zero weight")

    mde_sum, ss_sum = mde.net.checksum(), ss.net.checksum()
    saved_flags = [(p, p.requires_grad)
                   for p in mde.net.parameters() + ss.net.parameters()]
    mde.net.set_trainable(False)
    ss.net.set_trainable(False)

    coords = [surface_coords(s.depth, s.intrinsics) for s in scenes]
    content_cfg = None
    if w.delta > 0:
        content_cfg = ContentLossConfig(
            extractor=lambda t: ss.features(image_to_batch(t),
                                            layer=config.content_layer),
            references=textures.reference_set(config.t_res))

    rng = np.random.default_rng(config.seed)
    theta = rng.random((config.t_res, config.t_res, 3))
    state = AdamState()
    curve: list = []
    step_log: list = []

    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(scenes))
            epoch_rows = []
            for start in range(0, len(scenes), config.batch_size):
                idx = order[start:start + config.batch_size]
                prev_theta = theta
                with dc.Tape():
                    theta_t = dc.Tensor(theta, requires_grad=True)
                    try:
                        loss, row = _step_forward(
                            theta_t, idx, scenes, coords, config, rng, epoch,
                            w, mde, ss, content_cfg, need_mde, need_ss)
                    except dc.DomainError as exc:
                        raise AttackError(
                            f"non-finite forward at epoch {epoch}: {exc}",
                            last_good_theta=prev_theta,
                            diagnostics={"epoch": epoch}) from exc
                    if not all(np.isfinite(v) for v in row.values()):
                        raise AttackError(
                            f"non-finite loss at epoch {epoch}",
                            last_good_theta=prev_theta,
                            diagnostics={"epoch": epoch, "components": row})
                    loss.backward()
                    grad = theta_t.grad
                if grad is None:
                    raise AttackError("loss does not depend on the texture")
                theta = adam_step([theta], [grad], state, config.lr,
                                  clamp=(0.0, 1.0))[0]
                epoch_rows.append(row)
                step_log.append(row)
            curve.append(_epoch_summary(epoch, epoch_rows))
    finally:
        for p, flag in saved_flags:
            p.requires_grad = flag

    if mde.net.checksum() != mde_sum or ss.net.checksum() != ss_sum:
        raise AttackError("victim weights changed during the attack")
    if curve[-1]["total"] > curve[0]["total"]:
        raise AttackError(
            f"optimization did not improve: total went "
            f"{curve[0]['total']:.6f} -> {curve[-1]['total']:.6f}",
            last_good_theta=theta,
            diagnostics={"curve": curve})

    artifact = PatchArtifact(
        theta=theta,
        config=config.to_dict(),
        curve=curve,
        provenance={
            "mde_checksum": mde_sum,
            "ss_checksum": ss_sum,
            "dataset_hash": hash_scenes(scenes),
            "scene_count": len(scenes),
            "seed": config.seed,
        },
        step_log=step_log,
    )
    return AttackResult(artifact=artifact, mde_checksum=mde_sum,
                        ss_checksum=ss_sum)


def _step_forward(theta_t, idx, scenes, coords, config, rng, epoch, w,
                  mde, ss, content_cfg, need_mde, need_ss):
    """One minibatch forward: EOT draws, projection, victims, loss."""
    inputs, masks = [], []
    for i in idx:
        where = f"epoch {epoch} scene {scenes[i].seed}"
        offset = _draw_placement(scenes[i], coords[i], config, rng, where)
        tex = texture_augment(theta_t, config.augment, rng) \
            if config.use_texture_augment else theta_t
        img, mask = _place_element(scenes[i], coords[i], tex, offset, config)
        if config.use_final_augment:
            img = final_augment(img, config.augment, rng)
        inputs.append(image_to_batch(img))
        masks.append(mask)

    components: dict = {}
    if need_mde or need_ss:
        batch = _batch_inputs(inputs)
        if need_mde:
            disp = predict_disparity(mde, batch)
            components["mde"] = _mean_over([
                adv_mde_loss(_nth(disp, n), masks[n])
                for n in range(len(idx))])
        if need_ss:
            probs = predict_semantics(ss, batch)
            if w.beta_ua > 0:
                components["ss_untargeted"] = _mean_over([
                    adv_ss_untargeted(_nth(probs, n), masks[n],
                                      config.road_class)
                    for n in range(len(idx))])
            if w.beta_ta > 0:
                components["ss_targeted"] = _mean_over([
                    adv_ss_targeted(_nth(probs, n), masks[n],
                                    config.target_classes)
                    for n in range(len(idx))])
    if w.gamma > 0:
        components["tv"] = tv_loss(theta_t)
    if w.delta > 0:
        components["content"] = content_loss(theta_t, content_cfg)

    loss = total_loss(components, w)
    row = {k: v.item() for k, v in components.items()}
    row["total"] = loss.item()
    return loss, row


def _batch_inputs(inputs: list) -> dc.Tensor:
    if len(inputs) == 1:
        return inputs[0]
    return dc.concat(inputs, axis=0)


def _nth(batched: dc.Tensor, n: int) -> dc.Tensor:
    """Element n of a batched prediction, with the batch axis dropped."""
    sub = dc.crop(batched, (slice(n, n + 1),))
    return dc.reshape(sub, batched.shape[1:])


def _epoch_summary(epoch: int, rows: list) -> dict:
    summary = {"epoch": epoch}
    for key in CURVE_FIELDS[1:]:
        vals = [r[key] for r in rows if key in r]
        summary[key] = float(np.mean(vals)) if vals else None
    return summary
