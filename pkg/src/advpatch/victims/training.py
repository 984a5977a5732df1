"""Supervised training for the victim networks.

Full-frame batches, Adam, fixed seeds; nothing adaptive, so a rerun with
the same config reproduces the same weights bit for bit.
"""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..optim import AdamState, adam_step
from ..scenegen import LANE_MARKING, ROAD, SIDEWALK, Scene
from .models import MDEModel, SSModel, VictimError, predict_disparity

GROUND_CLASSES = (ROAD, LANE_MARKING, SIDEWALK)


def _rgb_batch(scenes: list[Scene], idx: np.ndarray, flips: np.ndarray,
               dtype) -> np.ndarray:
    imgs = []
    for i, f in zip(idx, flips):
        rgb = scenes[i].rgb[:, ::-1] if f else scenes[i].rgb
        imgs.append(rgb.transpose(2, 0, 1))
    return np.stack(imgs).astype(dtype)


def _run_epochs(scenes, epochs, lr, seed, net, loss_fn, batch_size, label,
                flip):
    if not scenes:
        raise VictimError("no training scenes")
    rng = np.random.default_rng(seed)
    params = net.parameters()
    state = AdamState()
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(scenes))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start: start + batch_size]
            # mirrored road scenes are valid scenes; free data when enabled
            flips = rng.random(len(idx)) < 0.5 if flip \
                else np.zeros(len(idx), dtype=bool)
            with dc.Tape():
                # a domain failure mid-forward (log/exp of garbage) is the
                # same event as a non-finite loss: the run is unusable
                try:
                    loss = loss_fn(idx, flips)
                    value = loss.item()
                except dc.DomainError as exc:
                    raise VictimError(
                        f"{label} training diverged at epoch {epoch} "
                        f"step {start // batch_size}: {exc}") from exc
                if not np.isfinite(value):
                    raise VictimError(
                        f"{label} training diverged at epoch {epoch} "
                        f"step {start // batch_size}: loss {value}")
                loss.backward()
            grads = [p.grad.astype(p.data.dtype) for p in params]
            new = adam_step([p.data for p in params], grads, state, lr)
            for p, arr in zip(params, new):
                p.data = arr
                p.zero_grad()
            epoch_losses.append(value)
        history.append(float(np.mean(epoch_losses)))
    return history


def train_mde(scenes: list[Scene], epochs: int = 12, lr: float = 2e-3,
              seed: int = 0, batch_size: int = 4, width_mult: float = 1.0,
              model: MDEModel | None = None, flip: bool = False) -> MDEModel:
    """L1 regression in log-depth space.

    Plain disparity L1 is dominated by near pixels (where disparity is
    large), leaving multi-x depth errors at range; |log d_pred - log d| is
    the relative error to first order, at every distance equally.
    """
    mde = model or MDEModel.create(seed=seed, width_mult=width_mult)
    dt = np.dtype(mde.net.dtype)
    conv = mde.convention
    a = 1.0 / conv.d_min - 1.0 / conv.d_max
    b = 1.0 / conv.d_max
    targets = [np.log(np.clip(s.depth, conv.d_min, conv.d_max)).astype(dt)
               for s in scenes]

    def loss_fn(idx, flips):
        x = dc.constant(_rgb_batch(scenes, idx, flips, dt))
        pred = predict_disparity(mde, x)
        # log(depth) = -log(disp * a + b); the denominator is positive for
        # any disparity in (0, 1)
        log_depth = dc.neg(dc.log(dc.add(dc.mul(pred, a), b)))
        tgt = dc.constant(np.stack(
            [targets[i][:, ::-1] if f else targets[i]
             for i, f in zip(idx, flips)]))
        return dc.reduce_mean(dc.absolute(dc.sub(log_depth, tgt)))

    mde.history = _run_epochs(scenes, epochs, lr, seed, mde.net, loss_fn,
                              batch_size, "mde", flip)
    return mde


def train_ss(scenes: list[Scene], epochs: int = 10, lr: float = 2e-3,
             seed: int = 0, batch_size: int = 4, width_mult: float = 1.0,
             model: SSModel | None = None, flip: bool = False) -> SSModel:
    """Per-pixel cross-entropy on the 6-class labels."""
    ss = model or SSModel.create(seed=seed, width_mult=width_mult)
    dt = np.dtype(ss.net.dtype)
    n_classes = len(ss.classes)
    onehots = []
    for s in scenes:
        oh = np.zeros((n_classes,) + s.labels.shape, dtype=dt)
        for c in range(n_classes):
            oh[c][s.labels == c] = 1.0
        onehots.append(oh)

    def loss_fn(idx, flips):
        x = dc.constant(_rgb_batch(scenes, idx, flips, dt))
        logits = ss.logits(x)
        oh = dc.constant(np.stack(
            [onehots[i][:, :, ::-1] if f else onehots[i]
             for i, f in zip(idx, flips)]))
        # log-sum-exp with a detached per-pixel max; the gradient is exact
        # because the subtracted constant cancels
        mx = dc.constant(np.max(logits.data, axis=1, keepdims=True))
        shifted = dc.sub(logits, mx)
        lse = dc.add(mx, dc.log(dc.reduce_sum(dc.exp(shifted), axes=1,
                                              keepdims=True)))
        true_logit = dc.reduce_sum(dc.mul(logits, oh), axes=1, keepdims=True)
        return dc.reduce_mean(dc.sub(lse, true_logit))

    ss.history = _run_epochs(scenes, epochs, lr, seed, ss.net, loss_fn,
                             batch_size, "ss", flip)
    return ss


def predict_depth_map(mde: MDEModel, scene: Scene) -> np.ndarray:
    """Single-scene depth prediction in meters (no gradients)."""
    x = dc.constant(scene.rgb.transpose(2, 0, 1)[None].astype(mde.net.dtype))
    disp = predict_disparity(mde, x).data[0]
    return mde.convention.depth(disp.astype(np.float64))


def predict_label_map(ss: SSModel, scene: Scene) -> np.ndarray:
    """Single-scene argmax labels (no gradients)."""
    x = dc.constant(scene.rgb.transpose(2, 0, 1)[None].astype(ss.net.dtype))
    logits = ss.logits(x).data[0]
    return np.argmax(logits, axis=0).astype(np.uint8)


def mde_ground_rel_error(mde: MDEModel, scenes: list[Scene]) -> float:
    """Mean |d_pred - d| / d over ground-plane pixels of all scenes."""
    errs = []
    for s in scenes:
        pred = predict_depth_map(mde, s)
        ground = np.isin(s.labels, GROUND_CLASSES)
        errs.append(np.abs(pred[ground] - s.depth[ground]) / s.depth[ground])
    return float(np.mean(np.concatenate(errs)))


def ss_road_iou(ss: SSModel, scenes: list[Scene]) -> float:
    """Road-class IoU pooled over all scenes."""
    inter = union = 0
    for s in scenes:
        pred = predict_label_map(ss, s) == ROAD
        true = s.labels == ROAD
        inter += int((pred & true).sum())
        union += int((pred | true).sum())
    if union == 0:
        raise VictimError("no road pixels in evaluation scenes")
    return inter / union


def ss_accuracy(ss: SSModel, scenes: list[Scene]) -> float:
    hits = total = 0
    for s in scenes:
        pred = predict_label_map(ss, s)
        hits += int((pred == s.labels).sum())
        total += s.labels.size
    return hits / total
