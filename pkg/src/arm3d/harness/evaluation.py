"""Detection evaluation: per-category average precision and macro mAP.

Matching is greedy and one-to-one: detections are visited by descending
score (ties by stable input index) and claim the unmatched same-category
ground-truth box of highest IoU in their scene, provided the IoU clears
the threshold. AP integrates the whole precision-recall curve under its
monotone envelope (all-point interpolation). mAP macro-averages the
per-category APs; categories with no ground truth in the split are
excluded from the mean and reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from ..geometry import kernels
from ..geometry.boxes import boxes_to_arrays

DEFAULT_IOU_THRESHOLDS = (0.25, 0.5)


@dataclass
class CategoryEval:
    ap: float
    gt_count: int
    detection_count: int
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)


@dataclass
class EvalReport:
    per_category: dict        # {threshold_key: {category_name: CategoryEval}}
    map_at: dict              # {threshold_key: float}
    excluded: dict            # {threshold_key: [category_name, ...]}
    seeds: list = field(default_factory=list)

    def to_dict(self):
        return {
            "map": {k: self.map_at[k] for k in sorted(self.map_at)},
            "per_category_ap": {
                k: {name: ce.ap for name, ce in sorted(cats.items())}
                for k, cats in sorted(self.per_category.items())
            },
            "pr_curves": {
                k: {name: {"precision": ce.precision, "recall": ce.recall}
                    for name, ce in sorted(cats.items())}
                for k, cats in sorted(self.per_category.items())
            },
            "gt_counts": {
                k: {name: ce.gt_count for name, ce in sorted(cats.items())}
                for k, cats in sorted(self.per_category.items())
            },
            "excluded_categories": {k: sorted(v) for k, v in sorted(self.excluded.items())},
            "seeds": list(self.seeds),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def threshold_key(t):
    return format(float(t), "g")


def average_precision(tp_flags, n_gt):
    """All-point interpolated AP from ordered true-positive flags.
    Returns (ap, precision list, recall list)."""
    tp = np.asarray(tp_flags, dtype=np.float64)
    if tp.size == 0:
        return 0.0, [], []
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, tp.size + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum((recall - prev_recall) * envelope))
    return ap, precision.tolist(), recall.tolist()


def match_detections(detections_per_scene, scenes, iou_threshold):
    """Greedy one-to-one matching; returns {category: (tp_flags, n_gt)}
    with tp flags ordered by descending score."""
    categories = set()
    for scene in scenes:
        categories.update(b.category for b in scene.ground_truth)
    for dets in detections_per_scene:
        categories.update(d.category for d in dets)

    per_category = {}
    for cat in sorted(categories):
        entries = []  # (score, scene_idx, det_idx, box)
        n_gt = 0
        for s_idx, (scene, dets) in enumerate(zip(scenes, detections_per_scene)):
            n_gt += sum(1 for b in scene.ground_truth if b.category == cat)
            for d_idx, det in enumerate(dets):
                if det.category == cat:
                    entries.append((det.score, s_idx, d_idx, det.box))
        entries.sort(key=lambda e: (-e[0], e[1], e[2]))

        gt_by_scene = {}
        for s_idx, scene in enumerate(scenes):
            boxes = [b for b in scene.ground_truth if b.category == cat]
            gt_by_scene[s_idx] = (boxes_to_arrays(boxes), np.zeros(len(boxes), dtype=bool))

        tp_flags = []
        for score, s_idx, d_idx, box in entries:
            gt, used = gt_by_scene[s_idx]
            if len(gt) == 0:
                tp_flags.append(0)
                continue
            bmin = (box.center - 0.5 * box.size).reshape(1, 3)
            bmax = (box.center + 0.5 * box.size).reshape(1, 3)
            ious = kernels.pairwise_iou(bmin, bmax, gt.mins, gt.maxs)[0]
            ious = np.where(used, -1.0, ious)
            best = int(np.argmax(ious))
            if ious[best] >= iou_threshold:
                used[best] = True
                tp_flags.append(1)
            else:
                tp_flags.append(0)
        per_category[cat] = (tp_flags, n_gt)
    return per_category


def evaluate_map(detections_per_scene, scenes, category_names,
                 iou_thresholds=DEFAULT_IOU_THRESHOLDS, seeds=()) -> EvalReport:
    if len(detections_per_scene) != len(scenes):
        raise UsageError("detections_per_scene and scenes must align")
    per_category = {}
    map_at = {}
    excluded = {}
    for t in iou_thresholds:
        key = threshold_key(t)
        matched = match_detections(detections_per_scene, scenes, t)
        cats = {}
        skipped = []
        aps = []
        for cat, (tp_flags, n_gt) in matched.items():
            name = category_names[cat]
            if n_gt == 0:
                skipped.append(name)
                continue
            ap, precision, recall = average_precision(tp_flags, n_gt)
            cats[name] = CategoryEval(ap, n_gt, len(tp_flags), precision, recall)
            aps.append(ap)
        per_category[key] = cats
        excluded[key] = skipped
        map_at[key] = float(np.mean(aps)) if aps else 0.0
    return EvalReport(per_category, map_at, excluded, list(seeds))
