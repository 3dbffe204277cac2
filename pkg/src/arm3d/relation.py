"""The attention-based relation module.

Forward wiring, for N proposal features of width C:

1. an objectness head (C -> C/2 -> C/4 -> 2, batchnorm+ReLU on the
   hidden layers) predicts a binary quality label per proposal;
2. every proposal is matched with ``num_pairs`` partners drawn uniformly
   at random from the predicted-positive set (excluding itself);
3. each pair (i, j) becomes a feature row concat(f_i, f_i - f_j);
4. a shared pair trunk (2C -> C/2 -> C/4, batchnorm+ReLU) feeds two
   single-logit classifiers for the semantic and spatial relation;
5. key/query projections (C -> C/4 and 2C -> C/4, tanh, no bias,
   unshared weights) produce per-pair attention logits q . k, row-wise
   softmax turns them into weights;
6. the attention-weighted sum of each proposal's pair rows goes through
   one affine fuse layer back to width C: the relation feature, which
   callers concatenate with the proposal feature for downstream heads.

The fuse layer is applied once per proposal, after the weighted sum;
with softmax-normalized weights this is identical to applying it inside
the sum (the weights add to 1, so the bias contributes once either way).

Backward for the pairing/attention glue is hand-derived here; the MLP
segments replay their own tapes. Everything is checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError, UsageError
from .nn import (ParamStore, Tape, backward, dense_stack, init_params,
                 mlp_forward, softmax_rows)
from .nn.params import xavier_uniform


@dataclass(frozen=True)
class ModelConfig:
    feature_width: int = 128   # C
    num_pairs: int = 8         # partners matched per proposal
    category_count: int = 10

    def __post_init__(self):
        if self.feature_width % 4 != 0:
            raise UsageError("feature_width must be divisible by 4")
        if self.num_pairs < 1:
            raise UsageError("num_pairs must be >= 1")

    @property
    def attention_width(self):
        return self.feature_width // 4

    @property
    def pair_width(self):
        return 2 * self.feature_width


@dataclass
class ProposalBatch:
    features: np.ndarray  # (N, C)
    centers: np.ndarray   # (N, 3), meters

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ShapeError("features must be (N, C) with N >= 1")
        if self.centers.shape != (self.features.shape[0], 3):
            raise ShapeError("centers must be (N, 3)")

    def __len__(self):
        return self.features.shape[0]


@dataclass
class PairSet:
    pair_indices: np.ndarray   # (N, num_pairs) partner index per proposal
    pair_features: np.ndarray  # (N * num_pairs, 2C), i-major row layout


@dataclass
class AttentionRecord:
    weights: np.ndarray       # (N, num_pairs), rows sum to 1
    logits: np.ndarray        # (N, num_pairs)
    pair_indices: np.ndarray  # as in PairSet


@dataclass
class Arm3dOutput:
    relation_features: np.ndarray   # (N, C)
    objectness_logits: np.ndarray   # (N, 2)
    predicted_objectness: np.ndarray  # (N,) int64
    semantic_logits: np.ndarray     # (N * num_pairs, 1)
    spatial_logits: np.ndarray      # (N * num_pairs, 1)
    attention: AttentionRecord
    pair_set: PairSet


@dataclass
class Arm3dContext:
    """Caches required by arm3d_backward. Only built in train mode."""

    features: np.ndarray
    iflat: np.ndarray
    jflat: np.ndarray
    pair_features: np.ndarray
    obj_tape: Tape
    trunk_tape: Tape
    semantic_tape: Tape
    spatial_tape: Tape
    key_tanh: np.ndarray | None
    query_tanh: np.ndarray | None
    weights: np.ndarray
    aggregated: np.ndarray
    equal_attention: bool


@lru_cache(maxsize=None)
def objectness_specs(cfg: ModelConfig):
    c = cfg.feature_width
    return dense_stack("arm3d.objectness", [c, c // 2, c // 4, 2])


@lru_cache(maxsize=None)
def pair_trunk_specs(cfg: ModelConfig):
    # runs on N * num_pairs rows every step; the slim widths keep the
    # desk-scale training budget while leaving ample capacity
    c = cfg.feature_width
    return dense_stack("arm3d.pair_trunk", [2 * c, c // 2, c // 4],
                       final_activation="relu", final_batchnorm=True)


@lru_cache(maxsize=None)
def semantic_head_specs(cfg: ModelConfig):
    return dense_stack("arm3d.semantic_head", [cfg.feature_width // 4, 1],
                       batchnorm=False)


@lru_cache(maxsize=None)
def spatial_head_specs(cfg: ModelConfig):
    return dense_stack("arm3d.spatial_head", [cfg.feature_width // 4, 1],
                       batchnorm=False)


def init_arm3d_params(store: ParamStore, cfg: ModelConfig, rng):
    for specs in (objectness_specs(cfg), pair_trunk_specs(cfg),
                  semantic_head_specs(cfg), spatial_head_specs(cfg)):
        init_params(store, specs, rng)
    c, cw = cfg.feature_width, cfg.attention_width
    # key/query are bias-free so the attention logit stays a pure
    # bilinear form; weights are not shared between the two.
    store.add("arm3d.key.weight", xavier_uniform(rng, c, cw))
    store.add("arm3d.query.weight", xavier_uniform(rng, 2 * c, cw))
    store.add("arm3d.fuse.weight", xavier_uniform(rng, 2 * c, c))
    store.add("arm3d.fuse.bias", np.zeros(c))


def objectness_forward(params, cfg: ModelConfig, features, mode="train",
                       tape: Tape | None = None):
    """Binary objectness logits and argmax labels (ties resolve to 0)."""
    logits = mlp_forward(params, objectness_specs(cfg), features, mode, tape)
    predicted = (logits[:, 1] > logits[:, 0]).astype(np.int64)
    return logits, predicted


def select_and_match(predicted_labels, num_pairs, rng):
    """Partner indices (N, num_pairs) for every proposal.

    Partners are drawn uniformly from the label-1 proposals excluding the
    proposal itself, without replacement when the pool is large enough.
    A proposal whose pool is empty (no positive prediction, or the only
    positive is itself) falls back to drawing from all other proposals.
    """
    labels = np.asarray(predicted_labels, dtype=np.int64)
    n = labels.shape[0]
    if n < 2:
        raise UsageError("matching needs at least 2 proposals")
    selected = np.flatnonzero(labels == 1)
    everyone = np.arange(n)
    rows = np.empty((n, num_pairs), dtype=np.int64)
    for i in range(n):
        pool = selected[selected != i]
        if pool.size == 0:
            pool = np.delete(everyone, i)
        rows[i] = rng.choice(pool, size=num_pairs, replace=pool.size < num_pairs)
    return rows


def build_pair_features(features, pair_indices):
    """Row (i, j) holds concat(f_i, f_i - f_j); i-major layout."""
    n, num_pairs = pair_indices.shape
    iflat = np.repeat(np.arange(n), num_pairs)
    jflat = pair_indices.ravel()
    fi = features[iflat]
    return np.concatenate([fi, fi - features[jflat]], axis=1), iflat, jflat


def relation_heads_forward(params, cfg: ModelConfig, pair_features, mode="train",
                           tapes=None):
    """Shared trunk then one logit per pair for each relation type.
    `tapes`, when given, is a (trunk, semantic, spatial) Tape triple."""
    t_trunk, t_sem, t_spat = tapes if tapes is not None else (None, None, None)
    trunk = mlp_forward(params, pair_trunk_specs(cfg), pair_features, mode, t_trunk)
    semantic = mlp_forward(params, semantic_head_specs(cfg), trunk, mode, t_sem)
    spatial = mlp_forward(params, spatial_head_specs(cfg), trunk, mode, t_spat)
    return semantic, spatial


def attention_forward(params, cfg: ModelConfig, features, pair_features,
                      pair_indices, equal_attention=False):
    """Attention weights over each proposal's pairs.

    Returns (AttentionRecord, key_tanh, query_tanh); the tanh outputs are
    cached for backward and are None in the equal-attention ablation,
    which skips the key/query path entirely.
    """
    n, num_pairs = pair_indices.shape
    if equal_attention:
        weights = np.full((n, num_pairs), 1.0 / num_pairs)
        logits = np.zeros((n, num_pairs))
        return AttentionRecord(weights, logits, pair_indices), None, None
    k = np.tanh(features @ params.value("arm3d.key.weight"))
    q = np.tanh(pair_features @ params.value("arm3d.query.weight"))
    q3 = q.reshape(n, num_pairs, cfg.attention_width)
    logits = np.einsum("nkc,nc->nk", q3, k)
    weights = softmax_rows(logits)
    return AttentionRecord(weights, logits, pair_indices), k, q


def relation_features(params, attention: AttentionRecord, pair_features):
    """Fuse the attention-weighted pair rows into one width-C feature per
    proposal. Returns (features, aggregated) with the pre-fuse sum kept
    for backward."""
    n, num_pairs = attention.weights.shape
    pair3 = pair_features.reshape(n, num_pairs, -1)
    aggregated = np.einsum("nk,nkc->nc", attention.weights, pair3)
    out = aggregated @ params.value("arm3d.fuse.weight") + params.value("arm3d.fuse.bias")
    return out, aggregated


def arm3d_forward(params, cfg: ModelConfig, proposals: ProposalBatch, rng,
                  mode="train", equal_attention=False, selection="predicted",
                  gt_objectness=None, pair_indices=None):
    """Full relation-module pass.

    `selection` controls the matching pool: "predicted" uses the
    objectness head's labels, "all" bypasses selection (the no-OBM
    ablation), "teacher" substitutes the ground-truth objectness labels
    passed in `gt_objectness`. Precomputed `pair_indices` skip matching
    entirely (tests, replays). Returns (Arm3dOutput, Arm3dContext);
    the context is None in eval mode.
    """
    train = mode == "train"
    features = proposals.features
    obj_tape = Tape() if train else None
    obj_logits, predicted = objectness_forward(params, cfg, features, mode, obj_tape)

    if pair_indices is None:
        if selection == "predicted":
            match_labels = predicted
        elif selection == "all":
            match_labels = np.ones(len(proposals), dtype=np.int64)
        elif selection == "teacher":
            if gt_objectness is None:
                raise UsageError("teacher selection requires gt_objectness")
            match_labels = np.asarray(gt_objectness, dtype=np.int64)
        else:
            raise UsageError(f"unknown selection mode: {selection!r}")
        pair_indices = select_and_match(match_labels, cfg.num_pairs, rng)

    pair_features, iflat, jflat = build_pair_features(features, pair_indices)

    tapes = (Tape(), Tape(), Tape()) if train else None
    semantic_logits, spatial_logits = relation_heads_forward(
        params, cfg, pair_features, mode, tapes)

    attention, key_tanh, query_tanh = attention_forward(
        params, cfg, features, pair_features, pair_indices, equal_attention)
    rel, aggregated = relation_features(params, attention, pair_features)

    output = Arm3dOutput(rel, obj_logits, predicted, semantic_logits,
                         spatial_logits, attention, PairSet(pair_indices, pair_features))
    if not train:
        return output, None
    ctx = Arm3dContext(features, iflat, jflat, pair_features, obj_tape,
                       tapes[0], tapes[1], tapes[2], key_tanh, query_tanh,
                       attention.weights, aggregated, equal_attention)
    return output, ctx


def arm3d_backward(params, cfg: ModelConfig, ctx: Arm3dContext,
                   d_relation_features, d_objectness_logits=None,
                   d_semantic_logits=None, d_spatial_logits=None):
    """Accumulate parameter gradients; returns the gradient w.r.t. the
    proposal features."""
    n, c = ctx.features.shape
    num_pairs = cfg.num_pairs
    d_features = np.zeros_like(ctx.features)
    d_pair = np.zeros_like(ctx.pair_features)

    # fuse layer and the attention-weighted aggregation
    d_rel = np.asarray(d_relation_features, dtype=np.float64)
    fuse_w = params["arm3d.fuse.weight"]
    fuse_w.grad += ctx.aggregated.T @ d_rel
    params["arm3d.fuse.bias"].grad += d_rel.sum(axis=0)
    d_agg = d_rel @ fuse_w.value.T
    pair3 = ctx.pair_features.reshape(n, num_pairs, 2 * c)
    d_weights = np.einsum("nc,nkc->nk", d_agg, pair3)
    d_pair += (ctx.weights[:, :, None] * d_agg[:, None, :]).reshape(n * num_pairs, 2 * c)

    if not ctx.equal_attention:
        # softmax rows, then the bilinear q . k logits and tanh projections
        w = ctx.weights
        d_logits = w * (d_weights - (d_weights * w).sum(axis=1, keepdims=True))
        k, q = ctx.key_tanh, ctx.query_tanh
        q3 = q.reshape(n, num_pairs, cfg.attention_width)
        d_q = (d_logits[:, :, None] * k[:, None, :]).reshape(q.shape)
        d_k = np.einsum("nk,nkc->nc", d_logits, q3)
        d_query_pre = d_q * (1.0 - q * q)
        d_key_pre = d_k * (1.0 - k * k)
        query_w = params["arm3d.query.weight"]
        key_w = params["arm3d.key.weight"]
        query_w.grad += ctx.pair_features.T @ d_query_pre
        key_w.grad += ctx.features.T @ d_key_pre
        d_pair += d_query_pre @ query_w.value.T
        d_features += d_key_pre @ key_w.value.T

    # relation heads share the trunk output: sum both head gradients
    if d_semantic_logits is not None or d_spatial_logits is not None:
        zeros = np.zeros((n * num_pairs, 1))
        d_sem = zeros if d_semantic_logits is None else d_semantic_logits
        d_spat = zeros if d_spatial_logits is None else d_spatial_logits
        d_trunk = backward(ctx.semantic_tape, d_sem, params)
        d_trunk += backward(ctx.spatial_tape, d_spat, params)
        d_pair += backward(ctx.trunk_tape, d_trunk, params)

    # pair rows are concat(f_i, f_i - f_j): the first half flows to f_i,
    # the second half adds to f_i and subtracts from f_j
    first, second = d_pair[:, :c], d_pair[:, c:]
    d_features += (first + second).reshape(n, num_pairs, c).sum(axis=1)
    np.add.at(d_features, ctx.jflat, -second)

    if d_objectness_logits is not None:
        d_features += backward(ctx.obj_tape, d_objectness_logits, params)
    return d_features
