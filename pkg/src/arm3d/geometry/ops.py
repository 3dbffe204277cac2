"""Box algebra: distances, projections, overlap ratios, IoU, NMS.

The per-pair functions here are the readable reference forms used for
labeling single pairs and for audit dumps; batch paths (training-time
pair labeling, evaluation matching, NMS) go through the selected kernel
backend. All operations are pure functions over immutable inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from . import kernels
from .boxes import Box3D

PLANE_AXES = {"xy": (0, 1), "yz": (1, 2), "zx": (2, 0)}


def center_distance(a, b):
    """Euclidean distance between two 3-vectors (meters)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(((a - b) ** 2).sum()))


def projected_overlap_ratio(a: Box3D, b: Box3D, plane) -> float:
    """Overlap ratio of the two boxes projected on `plane` ("xy"|"yz"|"zx"):
    intersection area divided by the smaller of the two projected areas,
    i.e. max(inter/area_a, inter/area_b). In [0, 1]; 0 when disjoint."""
    if plane not in PLANE_AXES:
        raise UsageError(f"plane must be one of {sorted(PLANE_AXES)}, got {plane!r}")
    u, v = PLANE_AXES[plane]
    amin, amax = a.min_corner, a.max_corner
    bmin, bmax = b.min_corner, b.max_corner
    inter_u = max(0.0, min(amax[u], bmax[u]) - max(amin[u], bmin[u]))
    inter_v = max(0.0, min(amax[v], bmax[v]) - max(amin[v], bmin[v]))
    inter = inter_u * inter_v
    area_a = (amax[u] - amin[u]) * (amax[v] - amin[v])
    area_b = (bmax[u] - bmin[u]) * (bmax[v] - bmin[v])
    return float(max(inter / area_a, inter / area_b))


def _interval_gap(lo_a, hi_a, lo_b, hi_b):
    return max(0.0, lo_a - hi_b, lo_b - hi_a)


def axis_gap(a: Box3D, b: Box3D, direction) -> float:
    """Separation between the two boxes along `direction`:
    "vertical" is the gap between their z-intervals, "horizontal" the
    Euclidean gap between their xy-projected rectangles. Zero when the
    relevant projections overlap."""
    amin, amax = a.min_corner, a.max_corner
    bmin, bmax = b.min_corner, b.max_corner
    if direction == "vertical":
        return _interval_gap(amin[2], amax[2], bmin[2], bmax[2])
    if direction == "horizontal":
        dx = _interval_gap(amin[0], amax[0], bmin[0], bmax[0])
        dy = _interval_gap(amin[1], amax[1], bmin[1], bmax[1])
        return float(np.hypot(dx, dy))
    raise UsageError(f"direction must be 'vertical' or 'horizontal', got {direction!r}")


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Intersection volume over union volume for axis-aligned boxes."""
    amin, amax = a.min_corner, a.max_corner
    bmin, bmax = b.min_corner, b.max_corner
    inter = 1.0
    for k in range(3):
        inter *= max(0.0, min(amax[k], bmax[k]) - max(amin[k], bmin[k]))
    union = a.volume + b.volume - inter
    return float(inter / union)


def nms_3d(detections, iou_threshold) -> list[int]:
    """Greedy class-aware NMS over (Box3D, score) pairs.

    Visits detections by descending score (ties resolved toward the
    lower index) and suppresses any box whose IoU with an already kept
    box of the same category exceeds the threshold. Returns kept indices
    in visit order.
    """
    n = len(detections)
    if n == 0:
        return []
    scores = np.array([float(s) for _, s in detections])
    if not np.all(np.isfinite(scores)):
        raise UsageError("NMS scores must be finite")
    centers = np.stack([b.center for b, _ in detections])
    sizes = np.stack([b.size for b, _ in detections])
    cats = np.array([b.category for b, _ in detections], dtype=np.int64)
    order = np.lexsort((np.arange(n), -scores)).astype(np.int64)
    kept = kernels.nms_greedy(order, centers - 0.5 * sizes, centers + 0.5 * sizes,
                              cats, float(iou_threshold))
    return [int(k) for k in kept]
