"""Dense layer stack with exact reverse-mode gradients.

A model is a list of LayerSpec entries applied in order by mlp_forward.
Train-mode passes append records to a Tape; backward() replays the tape
in reverse, accumulating parameter gradients and returning the gradient
with respect to the original input. Only the layer kinds needed by the
relation module are supported: linear, batchnorm, relu, tanh, and
row-wise softmax.

Everything runs in float64. Batchnorm treats the row axis (proposals or
proposal pairs) as the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateBatchError, ShapeError, UsageError
from .params import ParamStore, kaiming_uniform, xavier_uniform

LAYER_KINDS = ("linear", "batchnorm", "relu", "tanh", "softmax_rows")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_width: int
    out_width: int
    has_bias: bool = True
    name: str = ""  # parameter prefix; required for linear and batchnorm

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UsageError(f"unknown layer kind: {self.kind!r}")
        if self.kind != "linear" and self.in_width != self.out_width:
            raise UsageError(f"{self.kind} layers require in_width == out_width")
        if self.kind in ("linear", "batchnorm") and not self.name:
            raise UsageError(f"{self.kind} layer needs a parameter name")


@dataclass
class Tape:
    """Ordered record of executed layers, consumed in reverse by backward()."""

    records: list = field(default_factory=list)

    def append(self, spec, cache):
        self.records.append((spec, cache))

    def __len__(self):
        return len(self.records)


def dense_stack(prefix, widths, batchnorm=True, activation="relu",
                final_activation=None, final_batchnorm=False, final_bias=True):
    """Build LayerSpec list for an MLP: linear [+ bn + activation] per hidden
    step, plain linear (optionally normalized/activated) on the output step."""
    specs = []
    n_steps = len(widths) - 1
    for k in range(n_steps):
        w_in, w_out = widths[k], widths[k + 1]
        last = k == n_steps - 1
        name = f"{prefix}.h{k + 1}"
        specs.append(LayerSpec("linear", w_in, w_out,
                               has_bias=final_bias if last else True, name=name))
        if (batchnorm and not last) or (final_batchnorm and last):
            specs.append(LayerSpec("batchnorm", w_out, w_out, name=f"{name}.bn"))
        if not last:
            specs.append(LayerSpec(activation, w_out, w_out))
        elif final_activation is not None:
            specs.append(LayerSpec(final_activation, w_out, w_out))
    return specs


def _feeds_relu(specs, idx):
    """True when the activation reached from layer `idx` (batchnorm is
    transparent) is a ReLU."""
    for s in specs[idx + 1:]:
        if s.kind == "batchnorm":
            continue
        return s.kind == "relu"
    return False


def init_params(store: ParamStore, specs, rng):
    """Register parameters for every layer in `specs`.

    Linear weights use Kaiming-uniform when the next activation in the
    stack is a ReLU, Xavier-uniform otherwise; biases start at zero.
    """
    for idx, spec in enumerate(specs):
        if spec.kind == "linear":
            init = kaiming_uniform if _feeds_relu(specs, idx) else xavier_uniform
            store.add(spec.name + ".weight", init(rng, spec.in_width, spec.out_width))
            if spec.has_bias:
                store.add(spec.name + ".bias", np.zeros(spec.out_width))
        elif spec.kind == "batchnorm":
            store.add(spec.name + ".gamma", np.ones(spec.out_width))
            store.add(spec.name + ".beta", np.zeros(spec.out_width))
            store.add(spec.name + ".running_mean", np.zeros(spec.out_width),
                      trainable=False)
            store.add(spec.name + ".running_var", np.ones(spec.out_width),
                      trainable=False)


def softmax_rows(x):
    """Row-wise softmax with max subtraction for overflow safety."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def mlp_forward(params: ParamStore, specs, x, mode="train", tape: Tape | None = None):
    """Apply a layer stack to a 2-D input.

    In train mode every layer appends its backward cache to `tape` and
    batchnorm uses (and updates) batch statistics; in eval mode batchnorm
    reads the running statistics and the tape may be omitted.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected 2-D input, got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = x
    for spec in specs:
        if out.shape[1] != spec.in_width:
            raise ShapeError(
                f"layer {spec.kind}({spec.name or '-'}) expects width "
                f"{spec.in_width}, got {out.shape[1]}")
        out, cache = _layer_forward(params, spec, out, mode)
        if tape is not None:
            tape.append(spec, cache)
    return out


def _layer_forward(params, spec, x, mode):
    if spec.kind == "linear":
        w = params.value(spec.name + ".weight")
        y = x @ w
        if spec.has_bias:
            y = y + params.value(spec.name + ".bias")
        return y, (x,)

    if spec.kind == "batchnorm":
        gamma = params.value(spec.name + ".gamma")
        beta = params.value(spec.name + ".beta")
        if mode == "train":
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    f"batchnorm {spec.name!r} needs >= 2 rows in train mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mean) * inv_std
            rm = params[spec.name + ".running_mean"]
            rv = params[spec.name + ".running_var"]
            rm.value[:] = BN_MOMENTUM * rm.value + (1.0 - BN_MOMENTUM) * mean
            rv.value[:] = BN_MOMENTUM * rv.value + (1.0 - BN_MOMENTUM) * var
            return gamma * xhat + beta, (xhat, inv_std, x.shape[0])
        mean = params.value(spec.name + ".running_mean")
        var = params.value(spec.name + ".running_var")
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv_std
        return gamma * xhat + beta, (xhat, inv_std, None)

    if spec.kind == "relu":
        return np.maximum(x, 0.0), (x,)
    if spec.kind == "tanh":
        y = np.tanh(x)
        return y, (y,)
    # softmax_rows
    y = softmax_rows(x)
    return y, (y,)


def backward(tape: Tape, output_grad, params: ParamStore):
    """Replay `tape` in reverse; returns the gradient w.r.t. the original
    input and accumulates parameter gradients (additive)."""
    if len(tape) == 0:
        raise UsageError("backward called with an empty tape")
    g = np.asarray(output_grad, dtype=np.float64)
    for spec, cache in reversed(tape.records):
        if g.shape[1] != spec.out_width:
            raise ShapeError(
                f"gradient width {g.shape[1]} does not match layer "
                f"{spec.kind}({spec.name or '-'}) output width {spec.out_width}")
        g = _layer_backward(params, spec, g, cache)
    return g


def _layer_backward(params, spec, g, cache):
    if spec.kind == "linear":
        (x,) = cache
        w = params[spec.name + ".weight"]
        w.grad += x.T @ g
        if spec.has_bias:
            params[spec.name + ".bias"].grad += g.sum(axis=0)
        return g @ w.value.T

    if spec.kind == "batchnorm":
        xhat, inv_std, n = cache
        gp = params[spec.name + ".gamma"]
        params[spec.name + ".beta"].grad += g.sum(axis=0)
        gp.grad += (g * xhat).sum(axis=0)
        g_xhat = g * gp.value
        if n is None:  # eval mode: affine in x, no batch coupling
            return g_xhat * inv_std
        # train mode: account for the batch mean/variance dependence
        mean_g = g_xhat.mean(axis=0)
        mean_gx = (g_xhat * xhat).mean(axis=0)
        return inv_std * (g_xhat - mean_g - xhat * mean_gx)

    if spec.kind == "relu":
        (x,) = cache
        return g * (x > 0.0)
    if spec.kind == "tanh":
        (y,) = cache
        return g * (1.0 - y * y)
    # softmax_rows
    (y,) = cache
    return y * (g - (g * y).sum(axis=-1, keepdims=True))
