"""Scalar per-pixel reference implementations used as test oracles.

Everything here is written as plain Python loops over pixels, independent of
the vectorized library code, so agreement is meaningful.
"""

import numpy as np


def planar_map_reference(depth, intr, camera_height, theta, offset, scale, res,
                         vertical_band=0.05):
    """Per-pixel ground-plane tile mapping; returns (mapped, mask)."""
    h, w = depth.shape
    mapped = np.zeros((h, w, 3))
    mask = np.zeros((h, w))
    theta = np.asarray(theta, dtype=np.float64)
    for v in range(h):
        for u in range(w):
            d = float(depth[v, u])
            forward = d
            lateral = d * (u - intr.cx) / intr.fx
            vertical = d * (v - intr.cy) / intr.fy
            nf = ((forward - offset[0]) % scale) / scale
            nl = ((lateral - offset[1]) % scale) / scale
            ui = int(min(np.floor(nf * res + 0.5), res - 1))
            vi = int(min(np.floor(nl * res + 0.5), res - 1))
            mapped[v, u] = theta[ui, vi]
            inside = (offset[0] < forward < offset[0] + scale
                      and offset[1] < lateral < offset[1] + scale)
            if vertical_band is not None:
                inside = inside and abs(vertical - camera_height) < vertical_band
            mask[v, u] = 1.0 if inside else 0.0
    return mapped, mask


def point_in_convex_quad(px, py, quad):
    sign = 0
    for i in range(4):
        ax, ay = quad[i]
        bx, by = quad[(i + 1) % 4]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if cross != 0:
            s = 1 if cross > 0 else -1
            if sign == 0:
                sign = s
            elif s != sign:
                return False
    return True


def rel_ed_reference(depth_clean, depth_adv, patch_mask):
    """Mean relative depth deviation over patch pixels (scalar loop)."""
    num, den = 0.0, 0.0
    h, w = depth_clean.shape
    for v in range(h):
        for u in range(w):
            if patch_mask[v, u] > 0:
                num += abs(depth_clean[v, u] - depth_adv[v, u]) / depth_clean[v, u]
                den += 1.0
    return num / den if den > 0 else None


def ra_ed_reference(depth_clean, depth_adv, road_mask, patch_mask, thresh=0.25):
    """Road pixels whose relative depth error exceeds thresh, over patch area."""
    num, den = 0.0, 0.0
    h, w = depth_clean.shape
    for v in range(h):
        for u in range(w):
            den += 1.0 if patch_mask[v, u] > 0 else 0.0
            if road_mask[v, u] > 0:
                rel = abs(depth_clean[v, u] - depth_adv[v, u]) / depth_clean[v, u]
                if rel > thresh:
                    num += 1.0
    return num / den if den > 0 else None


def asr_reference(road_mask, pred_adv, patch_mask, road_id, target_ids=None):
    """Label-flip rate over patch pixels the clean model called road.

    road_mask is the clean road prediction. Untargeted when target_ids is
    None (any non-road flip counts); targeted otherwise (flip must land in
    target_ids).
    """
    num, den = 0.0, 0.0
    h, w = pred_adv.shape
    for v in range(h):
        for u in range(w):
            if patch_mask[v, u] > 0 and road_mask[v, u] > 0:
                den += 1.0
                if target_ids is None:
                    if pred_adv[v, u] != road_id:
                        num += 1.0
                elif pred_adv[v, u] in target_ids:
                    num += 1.0
    return num / den if den > 0 else None


def ra_ss_reference(road_mask, pred_adv, patch_mask, road_id, target_ids=None):
    """Affected clean-road area across the whole image, over patch area."""
    num, den = 0.0, 0.0
    h, w = pred_adv.shape
    for v in range(h):
        for u in range(w):
            den += 1.0 if patch_mask[v, u] > 0 else 0.0
            if road_mask[v, u] > 0:
                if target_ids is None:
                    if pred_adv[v, u] != road_id:
                        num += 1.0
                elif pred_adv[v, u] in target_ids:
                    num += 1.0
    return num / den if den > 0 else None
