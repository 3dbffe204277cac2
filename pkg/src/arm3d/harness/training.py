"""End-to-end training: proposals -> relation module -> detection heads.

One scene is one batch. Per step the loss combines:

* vote analogue  -- smooth-L1 on the predicted center delta against the
  offset to the nearest ground-truth center (positive proposals);
* objectness     -- class-weighted BCE over all proposals;
* box            -- smooth-L1 on the predicted log-size delta (positives);
* classification -- softmax cross entropy, background-supervised for
  proposals with no ground truth within the objectness radius;
* relation       -- class-weighted BCE on the semantic and spatial pair
  logits, masked to pairs whose endpoints are both positive.

The reverse pass is exact: head gradients flow through the fused
feature, split between the proposal-feature half and the relation half,
through the relation module's glue, and back into the shared embedding.

Determinism: every random draw comes from generators seeded with
explicit (seed, stream, index) tuples, so a seed fully determines the
dataset samples, matching, training order, and evaluation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from typing import TYPE_CHECKING

from ..errors import TrainingDivergenceError
from ..geometry.boxes import Scene, boxes_to_arrays
from ..geometry.ops import nms_3d
from ..labeling import label_objectness, pair_labels_batch
from ..nn import (ParamStore, Tape, backward, mlp_forward, optimizer_step,
                  save_checkpoint, step_decay_lr)
from ..relation import (ProposalBatch, arm3d_backward, arm3d_forward,
                        init_arm3d_params)
from .backbone import backbone_stub
from .detector import (detection_head, detection_head_backward, embed_specs,
                       init_detector_params, make_detections)
from .evaluation import EvalReport, evaluate_map
from .losses import (loss_total, loss_weighted_bce, smooth_l1,
                     softmax_cross_entropy)

if TYPE_CHECKING:
    from ..config import RunConfig


@dataclass
class DatasetEntry:
    scene: Scene
    ambiguous_instances: list


@dataclass
class Dataset:
    train: list
    val: list
    category_names: list


@dataclass
class SceneSample:
    """Per-scene, per-seed training inputs, cached across epochs."""

    scene: Scene
    seeds: object  # ProposalSeeds
    obj_labels: np.ndarray
    nearest_index: np.ndarray
    gt_arrays: object
    cls_targets: np.ndarray
    center_target: np.ndarray
    size_target: np.ndarray
    positive: np.ndarray


def prepare_sample(entry: DatasetEntry, run: RunConfig, seed, index,
                   epoch=None) -> SceneSample:
    """Draw the proposal stub for one scene. Training passes the epoch so
    backbone noise is redrawn every epoch (the desk-scale stand-in for
    data augmentation; without it the model memorizes the fixed noise
    instead of learning the mapping). Validation omits it for a fixed
    evaluation set."""
    stream = [seed, 101, index] if epoch is None else [seed, 103, epoch, index]
    rng = np.random.default_rng(stream)
    seeds = backbone_stub(entry.scene, run.synthetic_config(),
                          run.backbone_config(), rng,
                          entry.ambiguous_instances)
    labels = label_objectness(seeds.centers, entry.scene, run.xi)
    obj = np.array([l.label for l in labels], dtype=np.int64)
    nearest = np.array([l.nearest_index for l in labels], dtype=np.int64)
    gt = boxes_to_arrays(entry.scene.ground_truth)
    n = len(seeds)
    background = run.category_count
    cls_targets = np.full(n, background, dtype=np.int64)
    center_target = np.zeros((n, 3))
    size_target = np.zeros((n, 3))
    positive = obj == 1
    if len(gt) > 0:
        has_gt = nearest >= 0
        cls_targets[positive] = gt.categories[nearest[positive]]
        center_target[has_gt] = gt.centers[nearest[has_gt]] - seeds.centers[has_gt]
        gt_sizes = gt.maxs - gt.mins
        size_target[has_gt] = np.log(gt_sizes[nearest[has_gt]] / seeds.seed_sizes[has_gt])
    return SceneSample(entry.scene, seeds, obj, nearest, gt, cls_targets,
                       center_target, size_target, positive)


def prepare_samples(entries, run, seed, offset=0, epoch=None):
    return [prepare_sample(e, run, seed, offset + k, epoch)
            for k, e in enumerate(entries)]


def _selection_mode(run: RunConfig, training):
    if training and run.teacher_forcing:
        return "teacher"
    return "all" if run.no_obm else "predicted"


def train_step(params, run: RunConfig, sample: SceneSample, rng):
    """One forward/backward over a scene; returns the unweighted loss
    parts (vote, objectness, box, classification, relation)."""
    cfg = run.model_config()
    c = cfg.feature_width
    embed = embed_specs(sample.seeds.descriptors.shape[1], cfg)
    embed_tape = Tape()
    features = mlp_forward(params, embed, sample.seeds.descriptors, "train",
                           embed_tape)
    n = features.shape[0]

    out = ctx = None
    if run.no_arm3d:
        relation = np.zeros((n, c))
    else:
        out, ctx = arm3d_forward(
            params, cfg, ProposalBatch(features, sample.seeds.centers), rng,
            mode="train", equal_attention=run.equal_attention,
            selection=_selection_mode(run, training=True),
            gt_objectness=sample.obj_labels)
        relation = out.relation_features

    fused = np.concatenate([features, relation], axis=1)
    cls_logits, center_delta, size_delta, head_ctx = detection_head(
        params, cfg, fused, sample.seeds.geo, "train")

    loss_cls, d_cls = softmax_cross_entropy(cls_logits, sample.cls_targets)
    loss_vote, d_center, _ = smooth_l1(center_delta, sample.center_target,
                                       sample.positive)
    loss_box, d_size, _ = smooth_l1(size_delta, sample.size_target,
                                    sample.positive)

    loss_obj = 0.0
    d_obj_logits = None
    loss_rel = 0.0
    d_sem = d_spat = None
    if out is not None:
        if not run.no_obm:
            diff = out.objectness_logits[:, 1] - out.objectness_logits[:, 0]
            loss_obj, d_diff, _ = loss_weighted_bce(
                diff, sample.obj_labels, np.ones(n), run.w0, run.w1)
            d_obj_logits = np.zeros((n, 2))
            d_obj_logits[:, 1] = run.lambda2 * d_diff
            d_obj_logits[:, 0] = -run.lambda2 * d_diff
        iflat = np.repeat(np.arange(n), cfg.num_pairs)
        jflat = out.pair_set.pair_indices.ravel()
        sem_y, spat_y, valid = pair_labels_batch(
            sample.gt_arrays, sample.nearest_index, sample.obj_labels,
            iflat, jflat, run.thresholds())
        if run.relations in ("all", "semantic"):
            l_sem, g_sem, _ = loss_weighted_bce(
                out.semantic_logits, sem_y, valid, run.w0, run.w1)
            loss_rel += l_sem
            d_sem = run.lambda5 * g_sem.reshape(-1, 1)
        if run.relations in ("all", "spatial"):
            l_spat, g_spat, _ = loss_weighted_bce(
                out.spatial_logits, spat_y, valid, run.w0, run.w1)
            loss_rel += l_spat
            d_spat = run.lambda5 * g_spat.reshape(-1, 1)

    # reverse pass, loss weights applied per branch
    d_fused = detection_head_backward(
        params, head_ctx, run.lambda4 * d_cls, run.lambda1 * d_center,
        run.lambda3 * d_size)
    d_features = d_fused[:, :c].copy()
    if ctx is not None:
        d_features += arm3d_backward(params, cfg, ctx, d_fused[:, c:],
                                     d_obj_logits, d_sem, d_spat)
    backward(embed_tape, d_features, params)
    return np.array([loss_vote, loss_obj, loss_box, loss_cls, loss_rel])


def eval_scene(params, run: RunConfig, sample: SceneSample, rng):
    """Eval-mode forward; returns (post-NMS detections, attention record)."""
    cfg = run.model_config()
    embed = embed_specs(sample.seeds.descriptors.shape[1], cfg)
    features = mlp_forward(params, embed, sample.seeds.descriptors, "eval")
    n = features.shape[0]
    attention = None
    if run.no_arm3d:
        relation = np.zeros((n, cfg.feature_width))
    else:
        out, _ = arm3d_forward(
            params, cfg, ProposalBatch(features, sample.seeds.centers), rng,
            mode="eval", equal_attention=run.equal_attention,
            selection=_selection_mode(run, training=False))
        relation = out.relation_features
        attention = out.attention
    fused = np.concatenate([features, relation], axis=1)
    cls_logits, center_delta, size_delta, _ = detection_head(
        params, cfg, fused, sample.seeds.geo, "eval")
    detections = make_detections(cls_logits, center_delta, size_delta,
                                 sample.seeds, run.category_count)
    kept = nms_3d([(d.box, d.score) for d in detections], run.nms_iou)
    return [detections[k] for k in kept], attention


def evaluate_split(params, run: RunConfig, samples, category_names, seed,
                   stream=2) -> tuple[EvalReport, list]:
    detections = []
    for idx, sample in enumerate(samples):
        rng = np.random.default_rng([seed, stream, idx])
        dets, _ = eval_scene(params, run, sample, rng)
        detections.append(dets)
    report = evaluate_map(detections, [s.scene for s in samples],
                          category_names, seeds=[seed])
    return report, detections


METRIC_COLUMNS = ("epoch", "vote_analogue", "objectness", "box",
                  "classification", "relation", "total",
                  "val_map_0.25", "val_map_0.5")


def train_run(run: RunConfig, dataset: Dataset, seed, out_dir) -> dict:
    """Train one seed; writes metrics.csv, best/last checkpoints, and an
    attention dump into `out_dir`. Returns a summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = run.model_config()
    descriptor_width = run.backbone_config().descriptor_width(run.category_count)

    init_rng = np.random.default_rng([seed, 0])
    params = ParamStore()
    init_detector_params(params, cfg, descriptor_width, init_rng)
    if not run.no_arm3d:
        init_arm3d_params(params, cfg, init_rng)

    val_samples = prepare_samples(dataset.val, run, seed,
                                  offset=len(dataset.train))

    meta = {
        "feature_width": run.feature_width, "num_pairs": run.nk,
        "descriptor_width": descriptor_width,
        "category_table": list(dataset.category_names),
        "seed": seed, "config": run.to_dict(),
    }

    rows = []
    best_map = -1.0
    best_epoch = -1
    match_rng = np.random.default_rng([seed, 1])
    order_rng = np.random.default_rng([seed, 3])
    for epoch in range(run.epochs):
        lr = step_decay_lr(run.learning_rate, epoch, run.epochs)
        sums = np.zeros(5)
        train_samples = prepare_samples(dataset.train, run, seed, epoch=epoch)
        order = order_rng.permutation(len(train_samples))
        for idx in order:
            try:
                sums += train_step(params, run, train_samples[idx], match_rng)
                optimizer_step(params, lr)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(
                    f"epoch {epoch}, scene {train_samples[idx].scene.scene_id}: "
                    f"{exc}") from exc
        means = sums / max(len(train_samples), 1)
        breakdown = loss_total(*means, lambdas=run.lambdas)
        report, _ = evaluate_split(params, run, val_samples,
                                   dataset.category_names, seed)
        row = {
            "epoch": epoch,
            "vote_analogue": breakdown.vote_analogue,
            "objectness": breakdown.objectness,
            "box": breakdown.box,
            "classification": breakdown.classification,
            "relation": breakdown.relation,
            "total": breakdown.total,
            "val_map_0.25": report.map_at["0.25"],
            "val_map_0.5": report.map_at["0.5"],
        }
        rows.append(row)
        if report.map_at["0.5"] > best_map:
            best_map = report.map_at["0.5"]
            best_epoch = epoch
            save_checkpoint(params, out_dir / "best.ckpt", meta)

    if run.epochs == 0:
        best_map = 0.0
        save_checkpoint(params, out_dir / "best.ckpt", meta)
    save_checkpoint(params, out_dir / "last.ckpt", meta)
    write_metrics_csv(out_dir / "metrics.csv", rows)

    if val_samples:
        _, attention = eval_scene(params, run, val_samples[0],
                                  np.random.default_rng([seed, 4]))
        if attention is not None:
            dump = {
                "scene_id": val_samples[0].scene.scene_id,
                "weights": attention.weights.tolist(),
                "logits": attention.logits.tolist(),
                "pair_indices": attention.pair_indices.tolist(),
            }
            (out_dir / "attention.json").write_text(
                json.dumps(dump, sort_keys=True, indent=1) + "\n")

    return {"seed": seed, "best_val_map_0.5": best_map,
            "best_epoch": best_epoch, "epochs": run.epochs,
            "final_val_map_0.5": rows[-1]["val_map_0.5"] if rows else 0.0,
            "final_val_map_0.25": rows[-1]["val_map_0.25"] if rows else 0.0}


def write_metrics_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row["epoch"]] + [repr(float(row[c]))
                                              for c in METRIC_COLUMNS[1:]])
