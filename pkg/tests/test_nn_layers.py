import math

import numpy as np
import pytest

from arm3d.errors import DegenerateBatchError, ShapeError, UsageError
from arm3d.nn import (LayerSpec, ParamStore, Tape, backward, dense_stack,
                      init_params, mlp_forward, softmax_rows)


def scalar_mlp(params, specs, rows):
    """Independent pure-Python interpreter of a layer stack (eval-mode
    batchnorm); cross-checks the numpy implementation."""
    out = [list(map(float, r)) for r in rows]
    for spec in specs:
        if spec.kind == "linear":
            w = params.value(spec.name + ".weight").tolist()
            b = (params.value(spec.name + ".bias").tolist()
                 if spec.has_bias else [0.0] * spec.out_width)
            out = [
                [sum(row[i] * w[i][o] for i in range(spec.in_width)) + b[o]
                 for o in range(spec.out_width)]
                for row in out
            ]
        elif spec.kind == "batchnorm":
            gamma = params.value(spec.name + ".gamma").tolist()
            beta = params.value(spec.name + ".beta").tolist()
            mean = params.value(spec.name + ".running_mean").tolist()
            var = params.value(spec.name + ".running_var").tolist()
            out = [
                [gamma[o] * (row[o] - mean[o]) / math.sqrt(var[o] + 1e-5) + beta[o]
                 for o in range(spec.out_width)]
                for row in out
            ]
        elif spec.kind == "relu":
            out = [[max(0.0, v) for v in row] for row in out]
        elif spec.kind == "tanh":
            out = [[math.tanh(v) for v in row] for row in out]
        else:  # softmax_rows
            new = []
            for row in out:
                m = max(row)
                e = [math.exp(v - m) for v in row]
                s = sum(e)
                new.append([v / s for v in e])
            out = new
    return out


def identity_linear(store, name, width):
    store.add(name + ".weight", np.eye(width))


class TestMlpForward:
    def test_identity_spec(self, rng):
        params = ParamStore()
        identity_linear(params, "id.h1", 4)
        spec = [LayerSpec("linear", 4, 4, has_bias=False, name="id.h1")]
        x = rng.normal(size=(5, 4))
        out = mlp_forward(params, spec, x, mode="eval")
        np.testing.assert_array_equal(out, x)

    def test_zero_linear(self, rng):
        params = ParamStore()
        params.add("z.h1.weight", np.zeros((4, 2)))
        params.add("z.h1.bias", np.zeros(2))
        spec = [LayerSpec("linear", 4, 2, name="z.h1")]
        out = mlp_forward(params, spec, rng.normal(size=(3, 4)), mode="eval")
        np.testing.assert_array_equal(out, np.zeros((3, 2)))

    def test_linear_relu_hand_case(self):
        # W = I, b = (1, 1), relu on row (-3, 2) -> (0, 3)
        params = ParamStore()
        params.add("m.h1.weight", np.eye(2))
        params.add("m.h1.bias", np.ones(2))
        specs = [LayerSpec("linear", 2, 2, name="m.h1"), LayerSpec("relu", 2, 2)]
        out = mlp_forward(params, specs, np.array([[-3.0, 2.0]]), mode="eval")
        np.testing.assert_allclose(out, [[0.0, 3.0]])
        # cross-check with the independent scalar interpreter
        np.testing.assert_allclose(out, scalar_mlp(params, specs, [[-3.0, 2.0]]))

    def test_matches_scalar_interpreter_on_random_stacks(self, rng):
        params = ParamStore()
        specs = dense_stack("mix", [3, 5, 4, 2], activation="tanh",
                            final_activation="softmax_rows")
        init_params(params, specs, rng)
        x = rng.normal(size=(6, 3))
        out = mlp_forward(params, specs, x, mode="eval")
        np.testing.assert_allclose(out, scalar_mlp(params, specs, x), atol=1e-12)

    def test_shape_mismatch_raises(self, rng):
        params = ParamStore()
        specs = dense_stack("s", [4, 2], batchnorm=False)
        init_params(params, specs, rng)
        with pytest.raises(ShapeError):
            mlp_forward(params, specs, rng.normal(size=(3, 5)))

    def test_batchnorm_single_row_train_raises(self, rng):
        params = ParamStore()
        specs = dense_stack("b", [4, 4, 2])
        init_params(params, specs, rng)
        with pytest.raises(DegenerateBatchError):
            mlp_forward(params, specs, rng.normal(size=(1, 4)), mode="train", tape=Tape())
        # eval mode is fine with one row
        mlp_forward(params, specs, rng.normal(size=(1, 4)), mode="eval")

    def test_batchnorm_eval_is_affine(self, rng):
        params = ParamStore()
        specs = dense_stack("a", [4, 4, 4])
        init_params(params, specs, rng)
        # push running stats away from the init
        for _ in range(5):
            mlp_forward(params, specs, rng.normal(size=(8, 4)), mode="train", tape=Tape())
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(3, 4))
        fx = mlp_forward(params, specs[:2], x, mode="eval")  # linear + bn only
        fy = mlp_forward(params, specs[:2], y, mode="eval")
        fxy = mlp_forward(params, specs[:2], 0.5 * (x + y), mode="eval")
        np.testing.assert_allclose(fxy, 0.5 * (fx + fy), atol=1e-12)
        # no batch coupling: evaluating rows jointly or separately agrees
        stacked = mlp_forward(params, specs, np.vstack([x, y]), mode="eval")
        np.testing.assert_allclose(stacked[:3], mlp_forward(params, specs, x, mode="eval"))

    def test_deterministic_forward(self, rng):
        seed_params = []
        for _ in range(2):
            r = np.random.default_rng(7)
            params = ParamStore()
            specs = dense_stack("d", [4, 8, 2])
            init_params(params, specs, r)
            out = mlp_forward(params, specs, r.normal(size=(5, 4)), mode="train", tape=Tape())
            seed_params.append(out)
        np.testing.assert_array_equal(seed_params[0], seed_params[1])


class TestSoftmaxRows:
    def test_uniform_row(self):
        np.testing.assert_allclose(softmax_rows(np.zeros((1, 4))),
                                   np.full((1, 4), 0.25))

    def test_closed_form(self):
        out = softmax_rows(np.array([[math.log(2.0), 0.0]]))
        np.testing.assert_allclose(out, [[2.0 / 3.0, 1.0 / 3.0]], rtol=1e-12)

    def test_large_magnitude_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[0, 0], 1.0, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        for scale in (1e-3, 1.0, 1e3):
            x = rng.normal(size=(50, 7)) * scale
            out = softmax_rows(x)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(out >= 0.0) and np.all(out <= 1.0)
            if scale <= 1.0:  # entries saturate in float64 at extreme scales
                assert np.all(out > 0.0) and np.all(out < 1.0)


class TestLayerSpecValidation:
    def test_activation_width_mismatch(self):
        with pytest.raises(UsageError):
            LayerSpec("relu", 3, 4)

    def test_unknown_kind(self):
        with pytest.raises(UsageError):
            LayerSpec("conv", 3, 3)

    def test_empty_tape_backward(self):
        with pytest.raises(UsageError):
            backward(Tape(), np.zeros((1, 2)), ParamStore())
