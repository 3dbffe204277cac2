"""Ground-truth supervision for the relation module.

Three label families:

* objectness -- a proposal is positive when its center lies within
  ``xi`` (inclusive) of the nearest ground-truth object center;
* semantic  -- two ground-truth objects share a category and are
  distinct instances;
* spatial   -- two objects are vertically adjacent (z gap <= tau_d and
  xy overlap ratio >= tau_r) or horizontally adjacent (xy rectangle gap
  <= tau_d and max of yz/zx overlap ratios >= tau_r).

Proposal pairs inherit semantic/spatial labels from the nearest
ground-truth objects of their endpoints; the pair is masked invalid
whenever either endpoint's objectness is 0, which keeps relation losses
away from background pairs. Distance thresholds compare inclusively
(<=), ratio thresholds with >=.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .geometry import kernels
from .geometry.boxes import Box3D, BoxArrays, Scene, boxes_to_arrays
from .geometry.ops import axis_gap, projected_overlap_ratio


@dataclass(frozen=True)
class LabelThresholds:
    xi: float = 0.3      # objectness center-distance threshold (meters)
    tau_d: float = 0.1   # adjacency gap threshold (meters)
    tau_r: float = 0.5   # projected overlap ratio threshold

    def __post_init__(self):
        if self.xi <= 0 or self.tau_d <= 0 or not 0 < self.tau_r <= 1:
            raise UsageError(f"bad thresholds: {self}")


@dataclass
class ObjectnessLabel:
    proposal_index: int
    label: int                  # 1 iff distance <= xi and the scene has ground truth
    nearest_gt: int | None      # instance id of the nearest ground-truth object
    distance: float
    nearest_index: int = -1     # position of that object in scene.ground_truth


@dataclass
class RelationLabels:
    pair_index: tuple[int, int]
    semantic: int
    spatial: int
    valid: bool


def label_objectness(proposal_centers, scene: Scene, xi) -> list[ObjectnessLabel]:
    """Nearest-ground-truth assignment for every proposal center."""
    if xi <= 0:
        raise UsageError(f"xi must be positive, got {xi}")
    centers = np.asarray(proposal_centers, dtype=np.float64).reshape(-1, 3)
    gt = boxes_to_arrays(scene.ground_truth)
    dist, idx = kernels.nearest_gt(np.ascontiguousarray(centers),
                                   np.ascontiguousarray(gt.centers))
    out = []
    for p in range(centers.shape[0]):
        if idx[p] < 0:
            out.append(ObjectnessLabel(p, 0, None, float("inf")))
        else:
            g = int(idx[p])
            out.append(ObjectnessLabel(
                p, int(dist[p] <= xi), int(gt.instances[g]), float(dist[p]), g))
    return out


def label_semantic(gt_a: Box3D, gt_b: Box3D) -> int:
    """1 iff same category and different instance."""
    return int(gt_a.category == gt_b.category and gt_a.instance_id != gt_b.instance_id)


def label_spatial(gt_a: Box3D, gt_b: Box3D, tau_d, tau_r) -> int:
    if tau_d <= 0 or not 0 < tau_r <= 1:
        raise UsageError(f"bad spatial thresholds tau_d={tau_d}, tau_r={tau_r}")
    vertical = (axis_gap(gt_a, gt_b, "vertical") <= tau_d
                and projected_overlap_ratio(gt_a, gt_b, "xy") >= tau_r)
    if vertical:
        return 1
    horizontal = (axis_gap(gt_a, gt_b, "horizontal") <= tau_d
                  and max(projected_overlap_ratio(gt_a, gt_b, "yz"),
                          projected_overlap_ratio(gt_a, gt_b, "zx")) >= tau_r)
    return int(horizontal)


def label_pairs(assignments: list[ObjectnessLabel], pairs, scene: Scene,
                thresholds: LabelThresholds) -> list[RelationLabels]:
    """Relation labels for proposal index pairs, via each endpoint's
    nearest ground-truth object."""
    n = len(assignments)
    out = []
    for (i, j) in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise UsageError(f"pair ({i}, {j}) out of range for {n} proposals")
        a, b = assignments[i], assignments[j]
        valid = bool(a.label and b.label)
        if a.nearest_index < 0 or b.nearest_index < 0:
            out.append(RelationLabels((i, j), 0, 0, False))
            continue
        gt_a = scene.ground_truth[a.nearest_index]
        gt_b = scene.ground_truth[b.nearest_index]
        out.append(RelationLabels(
            (i, j),
            label_semantic(gt_a, gt_b),
            label_spatial(gt_a, gt_b, thresholds.tau_d, thresholds.tau_r),
            valid,
        ))
    return out


def pair_labels_batch(gt: BoxArrays, nearest_index, obj_labels, idx_a, idx_b,
                      thresholds: LabelThresholds):
    """Vectorized label_pairs for the training loop.

    `nearest_index`/`obj_labels` come from label_objectness; `idx_a` and
    `idx_b` are paired proposal index arrays. Returns float64 arrays
    (semantic, spatial, valid).
    """
    idx_a = np.asarray(idx_a, dtype=np.int64)
    idx_b = np.asarray(idx_b, dtype=np.int64)
    nearest_index = np.asarray(nearest_index, dtype=np.int64)
    obj_labels = np.asarray(obj_labels)
    valid = (obj_labels[idx_a] > 0) & (obj_labels[idx_b] > 0)
    k = idx_a.shape[0]
    if len(gt) == 0:
        zero = np.zeros(k)
        return zero, zero.copy(), np.zeros(k)
    ga = nearest_index[idx_a]
    gb = nearest_index[idx_b]
    semantic = ((gt.categories[ga] == gt.categories[gb])
                & (gt.instances[ga] != gt.instances[gb])).astype(np.float64)
    spatial = kernels.spatial_pair_labels(
        np.ascontiguousarray(gt.mins[ga]), np.ascontiguousarray(gt.maxs[ga]),
        np.ascontiguousarray(gt.mins[gb]), np.ascontiguousarray(gt.maxs[gb]),
        thresholds.tau_d, thresholds.tau_r).astype(np.float64)
    return semantic, spatial, valid.astype(np.float64)


def dump_labels_jsonl(fh, proposal_centers, pairs, scene: Scene,
                      thresholds: LabelThresholds):
    """Write audit records: one JSON line per proposal (objectness with
    its distance) and per pair (relation labels with the gaps and
    projected overlap ratios they were decided on)."""
    assignments = label_objectness(proposal_centers, scene, thresholds.xi)
    for a in assignments:
        fh.write(json.dumps({
            "type": "objectness", "scene_id": scene.scene_id,
            "proposal_index": a.proposal_index, "label": a.label,
            "nearest_gt": a.nearest_gt, "distance": a.distance,
        }, sort_keys=True) + "\n")
    relations = label_pairs(assignments, pairs, scene, thresholds)
    for rel in relations:
        i, j = rel.pair_index
        rec = {
            "type": "relation", "scene_id": scene.scene_id, "i": i, "j": j,
            "semantic": rel.semantic, "spatial": rel.spatial,
            "valid": rel.valid,
        }
        a, b = assignments[i], assignments[j]
        if a.nearest_index >= 0 and b.nearest_index >= 0:
            gt_a = scene.ground_truth[a.nearest_index]
            gt_b = scene.ground_truth[b.nearest_index]
            rec.update({
                "vertical_gap": axis_gap(gt_a, gt_b, "vertical"),
                "horizontal_gap": axis_gap(gt_a, gt_b, "horizontal"),
                "ratio_xy": projected_overlap_ratio(gt_a, gt_b, "xy"),
                "ratio_yz": projected_overlap_ratio(gt_a, gt_b, "yz"),
                "ratio_zx": projected_overlap_ratio(gt_a, gt_b, "zx"),
            })
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
