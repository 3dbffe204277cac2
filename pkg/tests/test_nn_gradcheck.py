import numpy as np
import pytest

from _gradcheck import (check_param_gradients, fd_array_gradient,
                        max_rel_error)
from arm3d.nn import (LayerSpec, ParamStore, Tape, backward, dense_stack,
                      init_params, mlp_forward)


def run_loss(params, specs, x, target):
    out = mlp_forward(params, specs, x, mode="train", tape=Tape())
    return 0.5 * float(((out - target) ** 2).sum())


def relu_margin_ok(params, specs, x, margin=1e-3):
    """Central differences are only valid away from ReLU kinks; reject
    draws with a preactivation within `margin` of zero."""
    tape = Tape()
    mlp_forward(params, specs, x, mode="train", tape=tape)
    return all(spec.kind != "relu" or np.abs(cache[0]).min() > margin
               for spec, cache in tape.records)


def analytic_grads(params, specs, x, target):
    params.zero_grads()
    tape = Tape()
    out = mlp_forward(params, specs, x, mode="train", tape=tape)
    d_in = backward(tape, out - target, params)
    return d_in, {n: params[n].grad.copy() for n in params.trainable_names()}


class TestTextbookIdentities:
    def test_single_linear_layer(self, rng):
        # y = x W: input grad g W^T, weight grad x^T g
        params = ParamStore()
        w = rng.normal(size=(3, 2))
        params.add("l.h1.weight", w)
        specs = [LayerSpec("linear", 3, 2, has_bias=False, name="l.h1")]
        x = rng.normal(size=(4, 3))
        g = rng.normal(size=(4, 2))
        tape = Tape()
        mlp_forward(params, specs, x, mode="train", tape=tape)
        d_in = backward(tape, g, params)
        np.testing.assert_allclose(d_in, g @ w.T, atol=1e-12)
        np.testing.assert_allclose(params["l.h1.weight"].grad, x.T @ g, atol=1e-12)

    def test_tanh_at_zero_is_identity(self):
        params = ParamStore()
        specs = [LayerSpec("tanh", 3, 3)]
        tape = Tape()
        mlp_forward(params, specs, np.zeros((2, 3)), mode="train", tape=tape)
        g = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(backward(tape, g, params), g)


LAYER_CASES = [
    ("linear", dict(batchnorm=False)),
    ("relu", dict(batchnorm=False, activation="relu", hidden=True)),
    ("tanh", dict(batchnorm=False, activation="tanh", hidden=True)),
    ("batchnorm", dict(batchnorm=True)),
    ("softmax", dict(batchnorm=False, final_activation="softmax_rows")),
]


class TestFiniteDifferences:
    @pytest.mark.parametrize("name,opts", LAYER_CASES, ids=[c[0] for c in LAYER_CASES])
    def test_each_layer_kind(self, name, opts):
        rng = np.random.default_rng(42)
        widths = [4, 5, 3] if opts.pop("hidden", False) else [4, 3]
        for draw in range(4):
            specs = dense_stack(f"{name}{draw}", widths, **opts)
            while True:
                params = ParamStore()
                init_params(params, specs, rng)
                x = rng.normal(size=(6, 4))
                if relu_margin_ok(params, specs, x):
                    break
            target = rng.normal(size=(6, 3))
            d_in, grads = analytic_grads(params, specs, x, target)
            worst = check_param_gradients(
                params, lambda: run_loss(params, specs, x, target), grads)
            fd_in = fd_array_gradient(x, lambda: run_loss(params, specs, x, target))
            assert max_rel_error(d_in, fd_in) < 1e-4, f"input grad, draw {draw}"
            assert worst < 1e-4

    def test_three_layer_mlp_many_draws(self):
        # >= 20 random parameter/input draws across mixed stacks
        rng = np.random.default_rng(7)
        for draw in range(20):
            specs = dense_stack(f"m{draw}", [3, 6, 5, 2],
                                activation="relu" if draw % 2 else "tanh",
                                batchnorm=draw % 3 != 0)
            while True:
                params = ParamStore()
                init_params(params, specs, rng)
                x = rng.normal(size=(5, 3))
                if relu_margin_ok(params, specs, x):
                    break
            target = rng.normal(size=(5, 2))
            _, grads = analytic_grads(params, specs, x, target)
            check_param_gradients(
                params, lambda: run_loss(params, specs, x, target), grads)

    def test_gradients_accumulate_across_heads(self, rng):
        # two forward passes sharing one parameter sum their gradients
        params = ParamStore()
        specs = dense_stack("shared", [3, 2], batchnorm=False)
        init_params(params, specs, rng)
        x1 = rng.normal(size=(4, 3))
        x2 = rng.normal(size=(4, 3))
        t1, t2 = Tape(), Tape()
        o1 = mlp_forward(params, specs, x1, mode="train", tape=t1)
        o2 = mlp_forward(params, specs, x2, mode="train", tape=t2)
        backward(t1, np.ones_like(o1), params)
        only_first = params["shared.h1.weight"].grad.copy()
        backward(t2, np.ones_like(o2), params)
        both = params["shared.h1.weight"].grad.copy()
        np.testing.assert_allclose(both, only_first + x2.T @ np.ones_like(o2), atol=1e-12)
