"""Detection head: classification plus box residual regression.

Consumes the fused per-proposal feature (proposal feature concatenated
with the relation feature, width 2C) together with the proposal's raw
geometric observation channels. A shared trunk feeds the category
classifier over (category_count + 1) classes -- background last -- while
the center/size regressors read the trunk output concatenated with the
observation channels (the direct path keeps small metric residuals from
drowning in the normalized feature stack). Predicted deltas apply to the
proposal's seed box. Proposals whose argmax is background emit no
detection; the others score by their winning softmax probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..geometry.boxes import Box3D
from ..nn import (ParamStore, Tape, backward, dense_stack, init_params,
                  mlp_forward, softmax_rows)
from ..relation import ModelConfig

GEO_WIDTH = 6  # center residual (3) + log-size residual (3)


@dataclass
class Detection:
    box: Box3D
    category: int
    score: float


@lru_cache(maxsize=None)
def embed_specs(descriptor_width, cfg: ModelConfig):
    c = cfg.feature_width
    return dense_stack("backbone.embed", [descriptor_width, c, c])


@lru_cache(maxsize=None)
def trunk_specs(cfg: ModelConfig):
    c = cfg.feature_width
    return dense_stack("head.trunk", [2 * c, c], final_activation="relu",
                       final_batchnorm=True)


@lru_cache(maxsize=None)
def cls_specs(cfg: ModelConfig):
    return dense_stack("head.cls", [cfg.feature_width, cfg.category_count + 1],
                       batchnorm=False)


@lru_cache(maxsize=None)
def center_specs(cfg: ModelConfig):
    return dense_stack("head.center", [cfg.feature_width + GEO_WIDTH, 3],
                       batchnorm=False)


@lru_cache(maxsize=None)
def size_specs(cfg: ModelConfig):
    return dense_stack("head.size", [cfg.feature_width + GEO_WIDTH, 3],
                       batchnorm=False)


def init_detector_params(store: ParamStore, cfg: ModelConfig, descriptor_width, rng):
    for specs in (embed_specs(descriptor_width, cfg), trunk_specs(cfg),
                  cls_specs(cfg), center_specs(cfg), size_specs(cfg)):
        init_params(store, specs, rng)


@dataclass
class HeadContext:
    trunk_tape: Tape
    cls_tape: Tape
    center_tape: Tape
    size_tape: Tape
    feature_width: int


def detection_head(params, cfg: ModelConfig, fused, geo, mode="train"):
    """Returns (cls_logits, center_delta, log_size_delta, ctx); ctx is
    None in eval mode. `geo` holds the per-proposal observation residual
    channels (N, GEO_WIDTH)."""
    train = mode == "train"
    tapes = [Tape() if train else None for _ in range(4)]
    trunk = mlp_forward(params, trunk_specs(cfg), fused, mode, tapes[0])
    reg_in = np.concatenate([trunk, geo], axis=1)
    cls_logits = mlp_forward(params, cls_specs(cfg), trunk, mode, tapes[1])
    center_delta = mlp_forward(params, center_specs(cfg), reg_in, mode, tapes[2])
    log_size_delta = mlp_forward(params, size_specs(cfg), reg_in, mode, tapes[3])
    ctx = HeadContext(*tapes, cfg.feature_width) if train else None
    return cls_logits, center_delta, log_size_delta, ctx


def detection_head_backward(params, ctx: HeadContext, d_cls, d_center, d_size):
    """All heads share the trunk output; the regression heads' gradient
    past their geo channels is discarded (geo is data)."""
    c = ctx.feature_width
    d_trunk = backward(ctx.cls_tape, d_cls, params)
    d_trunk += backward(ctx.center_tape, d_center, params)[:, :c]
    d_trunk += backward(ctx.size_tape, d_size, params)[:, :c]
    return backward(ctx.trunk_tape, d_trunk, params)


def make_detections(cls_logits, center_delta, log_size_delta, seeds,
                    category_count) -> list[Detection]:
    """Decode per-proposal outputs into detections; background-argmax
    proposals are dropped."""
    probs = softmax_rows(cls_logits)
    winners = probs.argmax(axis=1)
    out = []
    for row, cat in enumerate(winners):
        if cat == category_count:  # background
            continue
        center = seeds.centers[row] + center_delta[row]
        size = seeds.seed_sizes[row] * np.exp(log_size_delta[row])
        out.append(Detection(Box3D(center, size, int(cat), row),
                             int(cat), float(probs[row, cat])))
    return out
