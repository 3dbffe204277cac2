"""Parameter updates: Adam (default) with a plain-SGD mode for tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergenceError
from .params import ParamStore


@dataclass(frozen=True)
class OptimConfig:
    mode: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _divergent_name(params):
    for name in params.trainable_names():
        if not np.all(np.isfinite(params[name].grad)):
            return name
    return None


def optimizer_step(params: ParamStore, learning_rate, config: OptimConfig = OptimConfig()):
    """Apply one update to every trainable parameter, then zero gradients
    and bump step_count. Raises on non-finite gradients, naming the
    offending parameter."""
    if params.packed is not None and config.mode == "adam":
        values, grads, m, v = params.packed
        if not np.all(np.isfinite(grads)):
            raise TrainingDivergenceError(
                f"non-finite gradient for parameter {_divergent_name(params)!r}")
        params.step_count += 1
        t = params.step_count
        m *= config.beta1
        m += (1.0 - config.beta1) * grads
        v *= config.beta2
        v += (1.0 - config.beta2) * grads ** 2
        denom = np.sqrt(v / (1.0 - config.beta2 ** t))
        denom += config.eps
        values -= learning_rate * (m / (1.0 - config.beta1 ** t)) / denom
        grads.fill(0.0)
        return

    name = _divergent_name(params)
    if name is not None:
        raise TrainingDivergenceError(f"non-finite gradient for parameter {name!r}")
    params.step_count += 1
    t = params.step_count
    for pname in params.trainable_names():
        p = params[pname]
        if config.mode == "sgd":
            p.value -= learning_rate * p.grad
        else:
            m = params.adam_m.setdefault(pname, np.zeros_like(p.value))
            v = params.adam_v.setdefault(pname, np.zeros_like(p.value))
            m[:] = config.beta1 * m + (1.0 - config.beta1) * p.grad
            v[:] = config.beta2 * v + (1.0 - config.beta2) * p.grad ** 2
            m_hat = m / (1.0 - config.beta1 ** t)
            v_hat = v / (1.0 - config.beta2 ** t)
            p.value -= learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    params.zero_grads()


def step_decay_lr(base_lr, epoch, total_epochs, factor=0.1, milestones=(0.6, 0.8)):
    """Step schedule: multiply by `factor` once past each milestone fraction."""
    lr = base_lr
    for frac in milestones:
        if epoch >= int(frac * total_epochs):
            lr *= factor
    return lr
