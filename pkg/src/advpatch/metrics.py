"""Evaluation metrics for depth and segmentation attacks.

All metrics are mask ratios over a single scene. Depth inputs are the
victim's clean and adversarial depth predictions in meters; segmentation
inputs are integer label maps. Ratios against the patch area may exceed 1
when damage spills beyond the patch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsConfig:
    rel_ed_threshold: float = 0.25
    road_class: int = 0
    target_classes: tuple[int, ...] = (3, 4, 5)

    def __post_init__(self) -> None:
        if self.rel_ed_threshold <= 0:
            raise MetricsError("rel_ed_threshold must be positive")
        if not self.target_classes:
            raise MetricsError("target class set is empty")
        if self.road_class in self.target_classes:
            raise MetricsError("road class cannot be a target class")


def _as_mask(mask: np.ndarray, shape: tuple[int, ...], name: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise MetricsError(f"{name} shape {mask.shape} does not match {shape}")
    return mask.astype(bool)


def rel_ed(d_clean: np.ndarray, d_adv: np.ndarray,
           m_patch: np.ndarray) -> float:
    """Mean relative depth error over the patch footprint."""
    d_clean = np.asarray(d_clean, dtype=np.float64)
    d_adv = np.asarray(d_adv, dtype=np.float64)
    if d_clean.shape != d_adv.shape:
        raise MetricsError("depth map shapes differ")
    patch = _as_mask(m_patch, d_clean.shape, "patch mask")
    total = int(patch.sum())
    if total == 0:
        raise MetricsError("patch mask selects no pixels")
    if np.any(d_clean[patch] <= 0):
        raise MetricsError("clean depth must be positive inside the patch")
    err = np.abs(d_clean - d_adv) / d_clean
    return float(np.sum(err[patch]) / total)


def ra_ed(d_clean: np.ndarray, d_adv: np.ndarray, m_patch: np.ndarray,
          m_road: np.ndarray, threshold: float = 0.25) -> float:
    """Road pixels whose relative depth error exceeds the threshold,
    as a ratio of the patch area (may exceed 1)."""
    d_clean = np.asarray(d_clean, dtype=np.float64)
    d_adv = np.asarray(d_adv, dtype=np.float64)
    if d_clean.shape != d_adv.shape:
        raise MetricsError("depth map shapes differ")
    patch = _as_mask(m_patch, d_clean.shape, "patch mask")
    road = _as_mask(m_road, d_clean.shape, "road mask")
    total = int(patch.sum())
    if total == 0:
        raise MetricsError("patch mask selects no pixels")
    if np.any(d_clean[road] <= 0):
        raise MetricsError("clean depth must be positive on road pixels")
    err = np.zeros(d_clean.shape, dtype=np.float64)
    err[road] = np.abs(d_clean[road] - d_adv[road]) / d_clean[road]
    exceeded = (err > threshold) & road
    return float(int(exceeded.sum()) / total)


def asr(s_road: np.ndarray, s_adv: np.ndarray, m_patch: np.ndarray,
        road_class: int = 0,
        target_classes: Sequence[int] | None = None) -> float | None:
    """Fraction of patch pixels cleanly predicted as road that flipped.

    Untargeted (target_classes None): flipped to anything but road.
    Targeted: flipped into the target set. Returns None when no patch
    pixel was cleanly predicted road, so the caller can exclude the scene.
    """
    s_adv = np.asarray(s_adv)
    road = _as_mask(s_road, s_adv.shape, "road mask")
    patch = _as_mask(m_patch, s_adv.shape, "patch mask")
    denom_mask = patch & road
    denom = int(denom_mask.sum())
    if denom == 0:
        return None
    if target_classes is None:
        hits = (s_adv != road_class) & denom_mask
    else:
        hits = np.isin(s_adv, list(target_classes)) & denom_mask
    return float(int(hits.sum()) / denom)


def ra_ss(s_road: np.ndarray, s_adv: np.ndarray, m_patch: np.ndarray,
          road_class: int = 0,
          target_classes: Sequence[int] | None = None) -> float:
    """Whole-image road flips as a ratio of the patch area (may exceed 1)."""
    s_adv = np.asarray(s_adv)
    road = _as_mask(s_road, s_adv.shape, "road mask")
    patch = _as_mask(m_patch, s_adv.shape, "patch mask")
    total = int(patch.sum())
    if total == 0:
        raise MetricsError("patch mask selects no pixels")
    if target_classes is None:
        hits = (s_adv != road_class) & road
    else:
        hits = np.isin(s_adv, list(target_classes)) & road
    return float(int(hits.sum()) / total)


@dataclass(frozen=True)
class SceneScores:
    name: str
    rel_ed: float
    ra_ed: float
    asr_ua: float | None
    asr_ta: float | None
    ra_ua: float
    ra_ta: float
    patch_pixels: int
    road_pixels: int
    asr_denominator: int

    @property
    def excluded(self) -> bool:
        return self.asr_ua is None


def score_scene(name: str, d_clean: np.ndarray, d_adv: np.ndarray,
                labels_clean: np.ndarray, labels_adv: np.ndarray,
                m_patch: np.ndarray, config: MetricsConfig) -> SceneScores:
    """All six metrics for one scene.

    The road mask is the clean segmentation prediction, so the metrics
    measure damage relative to what the victim believed before the attack.
    """
    labels_clean = np.asarray(labels_clean)
    road = labels_clean == config.road_class
    patch = _as_mask(m_patch, labels_clean.shape, "patch mask")
    return SceneScores(
        name=name,
        rel_ed=rel_ed(d_clean, d_adv, patch),
        ra_ed=ra_ed(d_clean, d_adv, patch, road, config.rel_ed_threshold),
        asr_ua=asr(road, labels_adv, patch, config.road_class, None),
        asr_ta=asr(road, labels_adv, patch, config.road_class,
                   config.target_classes),
        ra_ua=ra_ss(road, labels_adv, patch, config.road_class, None),
        ra_ta=ra_ss(road, labels_adv, patch, config.road_class,
                    config.target_classes),
        patch_pixels=int(patch.sum()),
        road_pixels=int(road.sum()),
        asr_denominator=int((patch & road).sum()),
    )


def _mean(values: list[float]) -> float | None:
    if not values:
        return None
    # np.sum uses pairwise summation, keeping aggregation order-independent
    return float(np.sum(np.asarray(values, dtype=np.float64)) / len(values))


@dataclass
class MetricsReport:
    config: MetricsConfig
    scenes: list[SceneScores] = field(default_factory=list)

    def add(self, scores: SceneScores) -> None:
        self.scenes.append(scores)

    def aggregate(self) -> dict:
        if not self.scenes:
            raise MetricsError("report has no scenes")
        included = [s for s in self.scenes if not s.excluded]
        agg = {
            "rel_ed": _mean([s.rel_ed for s in self.scenes]),
            "ra_ed": _mean([s.ra_ed for s in self.scenes]),
            "asr_ua": _mean([s.asr_ua for s in included]),
            "asr_ta": _mean([s.asr_ta for s in included]),
            "ra_ua": _mean([s.ra_ua for s in self.scenes]),
            "ra_ta": _mean([s.ra_ta for s in self.scenes]),
            "scene_count": len(self.scenes),
            "asr_scene_count": len(included),
            "excluded_scenes": [s.name for s in self.scenes if s.excluded],
            "patch_pixels_total": int(sum(s.patch_pixels for s in self.scenes)),
            "road_pixels_total": int(sum(s.road_pixels for s in self.scenes)),
            "asr_denominator_total": int(sum(s.asr_denominator
                                             for s in self.scenes)),
        }
        return agg

    def scene_csv(self) -> str:
        cols = ("scene", "rel_ed", "ra_ed", "asr_ua", "asr_ta", "ra_ua",
                "ra_ta", "patch_pixels", "road_pixels", "asr_denominator",
                "excluded")
        lines = [",".join(cols)]
        for s in self.scenes:
            row = [s.name]
            for v in (s.rel_ed, s.ra_ed, s.asr_ua, s.asr_ta, s.ra_ua, s.ra_ta):
                row.append("" if v is None else format_value(v))
            row.extend([str(s.patch_pixels), str(s.road_pixels),
                        str(s.asr_denominator), str(int(s.excluded))])
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def aggregate_json(self) -> str:
        payload = {
            "config": {
                "rel_ed_threshold": self.config.rel_ed_threshold,
                "road_class": self.config.road_class,
                "target_classes": list(self.config.target_classes),
            },
            "aggregate": self.aggregate(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def format_value(x: float) -> str:
    """Deterministic float formatting shared by every CSV writer."""
    return f"{x:.10g}"
