import numpy as np
import pytest

from _gradcheck import check_param_gradients, fd_array_gradient, max_rel_error
from arm3d.errors import UsageError
from arm3d.nn import ParamStore, softmax_rows
from arm3d.relation import (AttentionRecord, Arm3dContext, ModelConfig,
                            ProposalBatch, arm3d_backward, arm3d_forward,
                            attention_forward, build_pair_features,
                            init_arm3d_params, objectness_forward,
                            relation_features, relation_heads_forward,
                            select_and_match)

CFG = ModelConfig(feature_width=8, num_pairs=2, category_count=3)


def make_params(cfg=CFG, seed=0):
    params = ParamStore()
    init_arm3d_params(params, cfg, np.random.default_rng(seed))
    return params


def make_batch(cfg=CFG, n=6, seed=1):
    rng = np.random.default_rng(seed)
    return ProposalBatch(rng.normal(size=(n, cfg.feature_width)),
                         rng.uniform(-2, 2, size=(n, 3)))


class TestModelConfig:
    def test_width_must_be_divisible_by_four(self):
        with pytest.raises(UsageError):
            ModelConfig(feature_width=6)

    def test_derived_widths(self):
        cfg = ModelConfig(feature_width=128, num_pairs=8)
        assert cfg.attention_width == 32
        assert cfg.pair_width == 256


class TestObjectnessForward:
    def test_zero_final_layer_ties_to_label_zero(self):
        params = make_params()
        params["arm3d.objectness.h3.weight"].value[:] = 0.0
        params["arm3d.objectness.h3.bias"].value[:] = 0.0
        logits, predicted = objectness_forward(params, CFG, make_batch().features,
                                               mode="eval")
        np.testing.assert_array_equal(logits, np.zeros_like(logits))
        np.testing.assert_array_equal(predicted, np.zeros(6, dtype=np.int64))

    def test_constant_logits_via_bias(self):
        params = make_params()
        params["arm3d.objectness.h3.weight"].value[:] = 0.0
        params["arm3d.objectness.h3.bias"].value[:] = [-1.2, 3.4]
        logits, predicted = objectness_forward(params, CFG, make_batch().features,
                                               mode="eval")
        np.testing.assert_allclose(logits, np.tile([-1.2, 3.4], (6, 1)))
        np.testing.assert_array_equal(predicted, np.ones(6, dtype=np.int64))


class TestSelectAndMatch:
    def test_partners_from_selected_pool(self):
        rng = np.random.default_rng(3)
        labels = np.array([1, 0, 1, 1, 0, 1, 1])
        pairs = select_and_match(labels, 3, rng)
        selected = {0, 2, 3, 5, 6}
        for i, row in enumerate(pairs):
            assert i not in set(row.tolist())
            assert set(row.tolist()) <= selected

    def test_no_replacement_when_pool_large(self):
        rng = np.random.default_rng(4)
        labels = np.ones(10, dtype=int)
        pairs = select_and_match(labels, 8, rng)
        for i, row in enumerate(pairs):
            assert len(set(row.tolist())) == 8  # 9 candidates, drawn distinct

    def test_replacement_when_pool_small(self):
        rng = np.random.default_rng(5)
        labels = np.array([1, 1, 0, 0, 0])
        pairs = select_and_match(labels, 4, rng)
        for i, row in enumerate(pairs):
            assert i not in set(row.tolist())

    def test_fallback_no_positive_predictions(self):
        rng = np.random.default_rng(6)
        pairs = select_and_match(np.zeros(5, dtype=int), 3, rng)
        for i, row in enumerate(pairs):
            assert i not in set(row.tolist())
            assert set(row.tolist()) <= set(range(5))

    def test_fallback_only_positive_is_self(self):
        rng = np.random.default_rng(7)
        labels = np.array([1, 0, 0, 0])
        pairs = select_and_match(labels, 2, rng)
        # rows 1..3 match the lone positive; row 0 falls back to everyone else
        for i in (1, 2, 3):
            assert set(pairs[i].tolist()) == {0}
        assert 0 not in set(pairs[0].tolist())

    def test_deterministic_given_seed(self):
        labels = np.zeros(32, dtype=int)
        labels[:10] = 1
        np.random.default_rng(11).shuffle(labels)
        a = select_and_match(labels, 8, np.random.default_rng(99))
        b = select_and_match(labels, 8, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_too_few_proposals(self):
        with pytest.raises(UsageError):
            select_and_match(np.array([1]), 2, np.random.default_rng(0))


class TestBuildPairFeatures:
    def test_identical_features_zero_difference(self):
        f = np.tile([1.0, 2.0, 3.0], (2, 1))
        pair, _, _ = build_pair_features(f, np.array([[1], [0]]))
        np.testing.assert_array_equal(pair, [[1, 2, 3, 0, 0, 0],
                                             [1, 2, 3, 0, 0, 0]])

    def test_hand_case(self):
        f = np.array([[1.0, 2.0], [0.5, 1.0]])
        pair, _, _ = build_pair_features(f, np.array([[1], [0]]))
        np.testing.assert_array_equal(pair[0], [1.0, 2.0, 0.5, 1.0])

    def test_row_layout_is_i_major(self, rng):
        f = rng.normal(size=(3, 4))
        idx = np.array([[1, 2], [0, 2], [0, 1]])
        pair, iflat, jflat = build_pair_features(f, idx)
        np.testing.assert_array_equal(iflat, [0, 0, 1, 1, 2, 2])
        np.testing.assert_array_equal(jflat, idx.ravel())
        for r, (i, j) in enumerate(zip(iflat, jflat)):
            np.testing.assert_array_equal(pair[r, :4], f[i])
            np.testing.assert_array_equal(pair[r, 4:], f[i] - f[j])

    def test_partner_recoverable_from_row(self, rng):
        # f_j = f_i - (second half) inverts the construction
        f = rng.normal(size=(8, 6))
        idx = rng.integers(0, 8, size=(8, 3))
        pair, iflat, jflat = build_pair_features(f, idx)
        recovered = pair[:, :6] - pair[:, 6:]
        assert np.max(np.abs(recovered - f[jflat])) < 1e-12


class TestRelationHeads:
    def test_zero_initialized_heads_give_probability_half(self, rng):
        params = make_params()
        for head in ("semantic_head", "spatial_head"):
            params[f"arm3d.{head}.h1.weight"].value[:] = 0.0
            params[f"arm3d.{head}.h1.bias"].value[:] = 0.0
        pair = rng.normal(size=(6, CFG.pair_width))
        sem, spat = relation_heads_forward(params, CFG, pair, mode="eval")
        np.testing.assert_array_equal(sem, np.zeros((6, 1)))
        np.testing.assert_array_equal(spat, np.zeros((6, 1)))

    def test_duplicated_rows_identical_logits(self, rng):
        params = make_params()
        row = rng.normal(size=CFG.pair_width)
        pair = np.vstack([row, rng.normal(size=CFG.pair_width), row, row])
        for mode in ("eval", "train"):
            sem, spat = relation_heads_forward(params, CFG, pair, mode=mode)
            np.testing.assert_allclose(sem[0], sem[2], atol=1e-12)
            np.testing.assert_allclose(sem[0], sem[3], atol=1e-12)
            np.testing.assert_allclose(spat[0], spat[2], atol=1e-12)


class TestAttention:
    def test_single_pair_weight_is_one(self, rng):
        cfg = ModelConfig(feature_width=8, num_pairs=1)
        params = make_params(cfg)
        batch = make_batch(cfg, n=4)
        pair, _, _ = build_pair_features(batch.features,
                                         np.array([[1], [0], [3], [2]]))
        record, _, _ = attention_forward(params, cfg, batch.features, pair,
                                         np.array([[1], [0], [3], [2]]))
        np.testing.assert_allclose(record.weights, np.ones((4, 1)))

    def test_equal_logits_give_uniform_weights(self, rng):
        params = make_params()
        params["arm3d.key.weight"].value[:] = 0.0  # k = 0 -> all logits 0
        batch = make_batch()
        idx = np.array([[1, 2]] * 6)
        pair, _, _ = build_pair_features(batch.features, idx)
        record, _, _ = attention_forward(params, CFG, batch.features, pair, idx)
        np.testing.assert_allclose(record.weights, np.full((6, 2), 0.5))

    def test_softmax_closed_form_row(self):
        w = softmax_rows(np.array([[np.log(2.0), 0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(w, [[0.4, 0.2, 0.2, 0.2]], rtol=1e-12)

    def test_weights_are_softmax_of_logits(self, rng):
        params = make_params()
        batch = make_batch(n=8)
        idx = select_and_match(np.ones(8, dtype=int), CFG.num_pairs, rng)
        pair, _, _ = build_pair_features(batch.features, idx)
        record, _, _ = attention_forward(params, CFG, batch.features, pair, idx)
        np.testing.assert_allclose(record.weights, softmax_rows(record.logits),
                                   atol=1e-12)
        np.testing.assert_allclose(record.weights.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_array_equal(record.weights.argmax(axis=1),
                                      record.logits.argmax(axis=1))

    def test_equal_attention_flag(self, rng):
        params = make_params()
        batch = make_batch()
        idx = np.array([[1, 2]] * 6)
        pair, _, _ = build_pair_features(batch.features, idx)
        record, k, q = attention_forward(params, CFG, batch.features, pair, idx,
                                         equal_attention=True)
        assert k is None and q is None
        np.testing.assert_array_equal(record.weights, np.full((6, 2), 0.5))


class TestRelationFeatures:
    def identity_fuse_params(self, width):
        params = ParamStore()
        params.add("arm3d.fuse.weight", np.eye(width))
        params.add("arm3d.fuse.bias", np.zeros(width))
        return params

    def test_identical_rows_independent_of_weights(self, rng):
        params = self.identity_fuse_params(4)
        row = rng.normal(size=4)
        pair = np.tile(row, (3, 1))  # one proposal, 3 identical pair rows
        idx = np.zeros((1, 3), dtype=np.int64)
        for w in ([0.2, 0.3, 0.5], [1.0, 0.0, 0.0]):
            record = AttentionRecord(np.array([w]), np.zeros((1, 3)), idx)
            out, _ = relation_features(params, record, pair)
            np.testing.assert_allclose(out[0], row, atol=1e-12)

    def test_identity_fuse_averages_rows(self, rng):
        params = self.identity_fuse_params(4)
        r1, r2 = rng.normal(size=4), rng.normal(size=4)
        record = AttentionRecord(np.array([[0.5, 0.5]]), np.zeros((1, 2)),
                                 np.zeros((1, 2), dtype=np.int64))
        out, _ = relation_features(params, record, np.vstack([r1, r2]))
        np.testing.assert_allclose(out[0], 0.5 * (r1 + r2), atol=1e-12)

    def test_outside_and_inside_fuse_forms_agree(self, rng):
        # softmax weights + affine fuse: applying the fuse layer inside
        # the weighted sum gives the same answer
        params = make_params()
        fuse_w = params.value("arm3d.fuse.weight")
        fuse_b = params["arm3d.fuse.bias"]
        fuse_b.value[:] = rng.normal(size=fuse_b.value.shape)  # nonzero bias
        for _ in range(10):
            batch = make_batch(seed=int(rng.integers(1 << 30)))
            idx = select_and_match(np.ones(6, dtype=int), CFG.num_pairs, rng)
            pair, _, _ = build_pair_features(batch.features, idx)
            record, _, _ = attention_forward(params, CFG, batch.features, pair, idx)
            outside, _ = relation_features(params, record, pair)
            per_row = pair @ fuse_w + fuse_b.value
            inside = np.einsum("nk,nkc->nc", record.weights,
                               per_row.reshape(6, CFG.num_pairs, -1))
            assert np.max(np.abs(outside - inside)) < 1e-10

    def test_aggregate_in_convex_hull(self, rng):
        params = make_params()
        batch = make_batch(n=5)
        idx = select_and_match(np.ones(5, dtype=int), CFG.num_pairs, rng)
        pair, _, _ = build_pair_features(batch.features, idx)
        record, _, _ = attention_forward(params, CFG, batch.features, pair, idx)
        _, agg = relation_features(params, record, pair)
        pair3 = pair.reshape(5, CFG.num_pairs, -1)
        assert np.all(agg >= pair3.min(axis=1) - 1e-12)
        assert np.all(agg <= pair3.max(axis=1) + 1e-12)


class TestArm3dForward:
    def test_output_shapes(self, rng):
        params = make_params()
        batch = make_batch(n=7)
        out, ctx = arm3d_forward(params, CFG, batch, rng, mode="train")
        assert out.relation_features.shape == (7, 8)
        assert out.objectness_logits.shape == (7, 2)
        assert out.semantic_logits.shape == (7 * CFG.num_pairs, 1)
        assert out.spatial_logits.shape == (7 * CFG.num_pairs, 1)
        assert out.attention.weights.shape == (7, CFG.num_pairs)
        assert ctx is not None
        out_eval, ctx_eval = arm3d_forward(params, CFG, batch, rng, mode="eval")
        assert ctx_eval is None

    def test_row_equivariance(self, rng):
        params = make_params()
        n = 6
        batch = make_batch(n=n)
        idx = select_and_match(np.ones(n, dtype=int), CFG.num_pairs, rng)
        out, _ = arm3d_forward(params, CFG, batch, rng, mode="train",
                               pair_indices=idx)

        perm = np.random.default_rng(8).permutation(n)
        inv = np.argsort(perm)
        # permute proposals and remap the pairing consistently
        perm_batch = ProposalBatch(batch.features[perm], batch.centers[perm])
        perm_idx = inv[idx[perm]]
        out_p, _ = arm3d_forward(params, CFG, perm_batch, rng, mode="train",
                                 pair_indices=perm_idx)
        np.testing.assert_allclose(out_p.relation_features,
                                   out.relation_features[perm], atol=1e-10)
        np.testing.assert_allclose(out_p.objectness_logits,
                                   out.objectness_logits[perm], atol=1e-10)
        np.testing.assert_allclose(out_p.attention.weights,
                                   out.attention.weights[perm], atol=1e-10)


def full_module_loss(params, cfg, batch, idx, targets, mode="train"):
    out, ctx = arm3d_forward(params, cfg, batch, None, mode=mode, pair_indices=idx)
    t_rel, t_obj, t_sem, t_spat = targets
    loss = (0.5 * ((out.relation_features - t_rel) ** 2).sum()
            + 0.5 * ((out.objectness_logits - t_obj) ** 2).sum()
            + 0.5 * ((out.semantic_logits - t_sem) ** 2).sum()
            + 0.5 * ((out.spatial_logits - t_spat) ** 2).sum())
    return float(loss), out, ctx


def module_relu_margin_ok(ctx, margin=1e-3):
    for tape in (ctx.obj_tape, ctx.trunk_tape):
        for spec, cache in tape.records:
            if spec.kind == "relu" and np.abs(cache[0]).min() < margin:
                return False
    return True


class TestArm3dGradients:
    @pytest.mark.parametrize("equal_attention", [False, True],
                             ids=["attention", "equal-weights"])
    def test_matches_finite_differences(self, equal_attention):
        rng = np.random.default_rng(21)
        cfg = ModelConfig(feature_width=8, num_pairs=2)
        for draw in range(3):
            while True:
                params = make_params(cfg, seed=int(rng.integers(1 << 30)))
                batch = make_batch(cfg, n=5, seed=int(rng.integers(1 << 30)))
                idx = select_and_match(np.ones(5, dtype=int), cfg.num_pairs, rng)
                targets = (rng.normal(size=(5, 8)), rng.normal(size=(5, 2)),
                           rng.normal(size=(10, 1)), rng.normal(size=(10, 1)))
                _, out, ctx = full_module_loss(params, cfg, batch, idx, targets)
                if module_relu_margin_ok(ctx):
                    break

            def loss_fn():
                value, _, _ = full_module_loss(params, cfg, batch, idx, targets)
                return value

            params.zero_grads()
            _, out, ctx = full_module_loss(params, cfg, batch, idx, targets)
            ctx.equal_attention = equal_attention
            if equal_attention:
                # rerun with uniform weights so forward and backward agree
                out, ctx = arm3d_forward(params, cfg, batch, None, mode="train",
                                         equal_attention=True, pair_indices=idx)
                params.zero_grads()
            t_rel, t_obj, t_sem, t_spat = targets
            d_feat = arm3d_backward(
                params, cfg, ctx,
                out.relation_features - t_rel,
                out.objectness_logits - t_obj,
                out.semantic_logits - t_sem,
                out.spatial_logits - t_spat)

            if equal_attention:
                def loss_fn():  # noqa: F811
                    out2, _ = arm3d_forward(params, cfg, batch, None, mode="train",
                                            equal_attention=True, pair_indices=idx)
                    return float(0.5 * ((out2.relation_features - t_rel) ** 2).sum()
                                 + 0.5 * ((out2.objectness_logits - t_obj) ** 2).sum()
                                 + 0.5 * ((out2.semantic_logits - t_sem) ** 2).sum()
                                 + 0.5 * ((out2.spatial_logits - t_spat) ** 2).sum())

            analytic = {n: params[n].grad.copy() for n in params.trainable_names()}
            check_param_gradients(params, loss_fn, analytic)
            fd_feat = fd_array_gradient(batch.features, loss_fn)
            assert max_rel_error(d_feat, fd_feat) < 1e-4
