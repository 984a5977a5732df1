"""Objective terms for texture optimization.

All masked terms use mean-over-masked-pixels semantics: the value does not
change when image resolution doubles with the same relative mask.  Masks are
plain arrays (placement geometry carries no gradient); maps and textures are
diffcore tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

EPS = 1e-6


class LossError(ValueError):
    pass


def _mask_total(mask: np.ndarray, shape: tuple[int, ...]) -> float:
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise LossError(f"mask shape {mask.shape} does not match map shape {shape}")
    total = float(mask.sum())
    if total <= 0.0:
        raise LossError("mask selects no pixels")
    return total


def _masked_mean(values: Tensor, mask: np.ndarray) -> Tensor:
    total = _mask_total(mask, values.shape)
    picked = dc.mul(values, dc.constant(np.asarray(mask, dtype=values.data.dtype)))
    return dc.div(dc.reduce_sum(picked), total)


def adv_mde_loss(disp: Tensor, mask: np.ndarray, eps: float = EPS) -> Tensor:
    """Push masked disparity toward zero (far): -mean(log(disp + eps))."""
    return dc.neg(_masked_mean(dc.log(dc.add(disp, eps)), mask))


def adv_ss_untargeted(probs: Tensor, mask: np.ndarray, road_class: int = 0,
                      eps: float = EPS) -> Tensor:
    """Push masked road probability down: -mean(log(1 - p_road + eps)).

    probs is (C, H, W) softmax output for a single image.
    """
    if probs.data.ndim != 3:
        raise LossError(f"expected (C, H, W) probabilities, got {probs.shape}")
    c = probs.shape[0]
    if not 0 <= road_class < c:
        raise LossError(f"road class {road_class} out of range for {c} channels")
    road = dc.reshape(dc.take(probs, np.array([road_class]), axis=0),
                      probs.shape[1:])
    return dc.neg(_masked_mean(dc.log(dc.add(dc.sub(1.0, road), eps)), mask))


def adv_ss_targeted(probs: Tensor, mask: np.ndarray,
                    target_classes: Sequence[int], eps: float = EPS) -> Tensor:
    """Pull masked pixels toward the target set: -mean(log(max_c p_c + eps)).

    The max runs over target_classes in the given order; ties route the
    gradient to the first listed class.
    """
    if probs.data.ndim != 3:
        raise LossError(f"expected (C, H, W) probabilities, got {probs.shape}")
    targets = list(target_classes)
    if not targets:
        raise LossError("target class set is empty")
    c = probs.shape[0]
    for t in targets:
        if not 0 <= t < c:
            raise LossError(f"target class {t} out of range for {c} channels")
    sel = dc.take(probs, np.array(targets), axis=0)
    best = dc.reduce_max(sel, axes=0)
    return dc.neg(_masked_mean(dc.log(dc.add(best, eps)), mask))


def tv_loss(theta: Tensor) -> Tensor:
    """Anisotropic total variation, normalized by texel count.

    Sums |horizontal diff| + |vertical diff| over all interior neighbor
    pairs and channels, divided by R*R (not by the number of pairs), so a
    2x2 single-channel checkerboard scores exactly 1.0.
    """
    if theta.data.ndim != 3 or theta.shape[0] != theta.shape[1]:
        raise LossError(f"expected square (R, R, C) texture, got {theta.shape}")
    r = theta.shape[0]
    if r < 2:
        raise LossError("texture too small for variation")
    full = slice(0, r)
    dh = dc.sub(dc.crop(theta, (full, slice(0, r - 1))),
                dc.crop(theta, (full, slice(1, r))))
    dv = dc.sub(dc.crop(theta, (slice(0, r - 1), full)),
                dc.crop(theta, (slice(1, r), full)))
    total = dc.add(dc.reduce_sum(dc.absolute(dh)),
                   dc.reduce_sum(dc.absolute(dv)))
    return dc.div(total, float(r * r))


@dataclass
class ContentLossConfig:
    """Frozen feature extractor plus the reference texture set.

    extractor maps an (R, R, 3) tensor to a feature tensor; it must build
    its graph from diffcore ops so gradients reach theta.  Reference
    features are computed once and cached.
    """

    extractor: Callable[[Tensor], Tensor]
    references: Sequence[np.ndarray]
    _ref_feats: list[np.ndarray] = field(default_factory=list, repr=False)

    def reference_features(self) -> list[np.ndarray]:
        if not self.references:
            raise LossError("content loss needs at least one reference texture")
        if not self._ref_feats:
            for ref in self.references:
                feats = self.extractor(dc.constant(np.asarray(ref, dtype=np.float64)))
                self._ref_feats.append(np.asarray(feats.data, dtype=np.float64))
        return self._ref_feats


def content_loss(theta: Tensor, config: ContentLossConfig) -> Tensor:
    """Distance to the nearest reference in feature space.

    min over references of mean |F(theta) - F(ref)|; the gradient flows
    through the selected branch only (ties pick the first reference).
    """
    ref_feats = config.reference_features()
    feats = config.extractor(theta)
    dists = []
    for rf in ref_feats:
        if rf.shape != feats.shape:
            raise LossError(
                f"reference feature shape {rf.shape} does not match {feats.shape}")
        dists.append(float(np.mean(np.abs(feats.data - rf))))
    best = int(np.argmin(dists))
    return dc.reduce_mean(dc.absolute(dc.sub(feats, ref_feats[best])))


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0       # depth term
    beta_ua: float = 0.5     # untargeted segmentation
    beta_ta: float = 0.5     # targeted segmentation
    gamma: float = 1.0       # total variation
    delta: float = 0.5       # content

    def __post_init__(self) -> None:
        for name in ("alpha", "beta_ua", "beta_ta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise LossError(f"negative loss weight {name}")


def total_loss(components: dict[str, Tensor | None],
               weights: LossWeights) -> Tensor:
    """Weighted sum of available components.

    A zero weight (or a missing/None component) drops the term entirely, so
    it contributes exactly zero gradient rather than a scaled one.
    """
    known = ("mde", "ss_untargeted", "ss_targeted", "tv", "content")
    for key in components:
        if key not in known:
            raise LossError(f"unknown loss component {key!r}")
    plan = (
        (weights.alpha, "mde"),
        (weights.beta_ua, "ss_untargeted"),
        (weights.beta_ta, "ss_targeted"),
        (weights.gamma, "tv"),
        (weights.delta, "content"),
    )
    total: Tensor | None = None
    for weight, key in plan:
        term = components.get(key)
        if weight == 0.0 or term is None:
            continue
        scaled = dc.mul(term, weight)
        total = scaled if total is None else dc.add(total, scaled)
    if total is None:
        return dc.constant(0.0)
    return total
