"""Numpy fallback implementations of the hot geometry kernels.

Same call surface as the compiled module ``_kernels_cy``; the two are
kept formula-identical (same operation order) so results match
bit-for-bit. See ``arm3d.geometry.kernels`` for backend selection and
``benchmarks/bench_geometry.py`` for the speed comparison.

All box inputs are (n, 3) float64 min/max corner arrays.
"""

from __future__ import annotations

import numpy as np


def pairwise_iou(mins_a, maxs_a, mins_b, maxs_b):
    """IoU of every box in `a` against every box in `b`; returns (n, m)."""
    lo = np.maximum(mins_a[:, None, :], mins_b[None, :, :])
    hi = np.minimum(maxs_a[:, None, :], maxs_b[None, :, :])
    inter = np.clip(hi - lo, 0.0, None).prod(axis=2)
    vol_a = (maxs_a - mins_a).prod(axis=1)
    vol_b = (maxs_b - mins_b).prod(axis=1)
    return inter / (vol_a[:, None] + vol_b[None, :] - inter)


def _rect_overlap_ratio(mins_a, maxs_a, mins_b, maxs_b, u, v):
    """Row-paired projected overlap ratio on the (u, v) plane:
    max(inter/area_a, inter/area_b)."""
    lo_u = np.maximum(mins_a[:, u], mins_b[:, u])
    hi_u = np.minimum(maxs_a[:, u], maxs_b[:, u])
    lo_v = np.maximum(mins_a[:, v], mins_b[:, v])
    hi_v = np.minimum(maxs_a[:, v], maxs_b[:, v])
    inter = np.clip(hi_u - lo_u, 0.0, None) * np.clip(hi_v - lo_v, 0.0, None)
    area_a = (maxs_a[:, u] - mins_a[:, u]) * (maxs_a[:, v] - mins_a[:, v])
    area_b = (maxs_b[:, u] - mins_b[:, u]) * (maxs_b[:, v] - mins_b[:, v])
    return np.maximum(inter / area_a, inter / area_b)


def _interval_gap(lo_a, hi_a, lo_b, hi_b):
    return np.maximum(0.0, np.maximum(lo_a - hi_b, lo_b - hi_a))


def spatial_pair_stats(mins_a, maxs_a, mins_b, maxs_b):
    """Row-paired spatial quantities: (vertical_gap, horizontal_gap,
    ratio_xy, ratio_yz, ratio_zx)."""
    vgap = _interval_gap(mins_a[:, 2], maxs_a[:, 2], mins_b[:, 2], maxs_b[:, 2])
    dx = _interval_gap(mins_a[:, 0], maxs_a[:, 0], mins_b[:, 0], maxs_b[:, 0])
    dy = _interval_gap(mins_a[:, 1], maxs_a[:, 1], mins_b[:, 1], maxs_b[:, 1])
    hgap = np.sqrt(dx * dx + dy * dy)
    r_xy = _rect_overlap_ratio(mins_a, maxs_a, mins_b, maxs_b, 0, 1)
    r_yz = _rect_overlap_ratio(mins_a, maxs_a, mins_b, maxs_b, 1, 2)
    r_zx = _rect_overlap_ratio(mins_a, maxs_a, mins_b, maxs_b, 2, 0)
    return vgap, hgap, r_xy, r_yz, r_zx


def spatial_pair_labels(mins_a, maxs_a, mins_b, maxs_b, tau_d, tau_r):
    """Row-paired binary spatial relation: vertically adjacent (z gap
    <= tau_d and xy overlap ratio >= tau_r) or horizontally adjacent
    (xy rectangle gap <= tau_d and max(yz, zx) overlap ratio >= tau_r)."""
    vgap, hgap, r_xy, r_yz, r_zx = spatial_pair_stats(mins_a, maxs_a, mins_b, maxs_b)
    vertical = (vgap <= tau_d) & (r_xy >= tau_r)
    horizontal = (hgap <= tau_d) & (np.maximum(r_yz, r_zx) >= tau_r)
    return (vertical | horizontal).astype(np.uint8)


def nearest_gt(centers, gt_centers):
    """Per row of `centers`: (distance to nearest gt center, its index).
    Empty gt set yields (+inf, -1)."""
    n = centers.shape[0]
    if gt_centers.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=np.int64)
    delta = centers[:, None, :] - gt_centers[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", delta, delta)
    idx = d2.argmin(axis=1)
    dist = np.sqrt(d2[np.arange(n), idx])
    return dist, idx.astype(np.int64)


def nms_greedy(order, mins, maxs, categories, iou_threshold):
    """Greedy class-aware suppression. `order` is the visit order
    (descending score, ties by lower index); boxes with IoU strictly
    above the threshold against a kept same-category box are dropped."""
    n = mins.shape[0]
    suppressed = np.zeros(n, dtype=bool)
    vol = (maxs - mins).prod(axis=1)
    kept = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(int(i))
        lo = np.maximum(mins, mins[i])
        hi = np.minimum(maxs, maxs[i])
        inter = np.clip(hi - lo, 0.0, None).prod(axis=1)
        iou = inter / (vol + vol[i] - inter)
        hit = (iou > iou_threshold) & (categories == categories[i])
        hit[i] = False
        suppressed |= hit
    return np.array(kept, dtype=np.int64)
