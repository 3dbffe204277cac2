"""Named parameter storage with gradient slots.

All learnable state lives in a ParamStore: weight matrices, biases,
batchnorm scale/shift, and the (non-trainable) batchnorm running
statistics. Every entry owns a same-shape gradient buffer that backward
passes accumulate into additively, so parameters shared between heads
receive summed gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    trainable: bool = True


@dataclass
class ParamStore:
    entries: dict[str, Param] = field(default_factory=dict)
    step_count: int = 0
    # Adam moment buffers, created lazily by the optimizer.
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    # flat (value, grad, m, v) buffers once pack() has run
    packed: tuple | None = field(default=None, repr=False)

    def add(self, name, value, trainable=True):
        if name in self.entries:
            raise UsageError(f"duplicate parameter name: {name!r}")
        if self.packed is not None:
            raise UsageError("cannot add parameters to a packed store")
        value = np.asarray(value, dtype=np.float64)
        self.entries[name] = Param(value, np.zeros_like(value), trainable)
        return self.entries[name]

    def pack(self):
        """Re-house every trainable parameter as a view into one flat
        buffer so the optimizer can update them with a handful of
        vectorized operations. Call once, after all adds."""
        if self.packed is not None:
            return
        names = self.trainable_names()
        total = sum(self.entries[n].value.size for n in names)
        values = np.empty(total)
        grads = np.zeros(total)
        offset = 0
        for n in names:
            p = self.entries[n]
            size = p.value.size
            values[offset:offset + size] = p.value.ravel()
            p.value = values[offset:offset + size].reshape(p.value.shape)
            p.grad = grads[offset:offset + size].reshape(p.grad.shape)
            offset += size
        self.packed = (values, grads, np.zeros(total), np.zeros(total))

    def __contains__(self, name):
        return name in self.entries

    def __getitem__(self, name) -> Param:
        try:
            return self.entries[name]
        except KeyError:
            raise UsageError(f"unknown parameter: {name!r}") from None

    def value(self, name):
        return self[name].value

    def names(self):
        return list(self.entries)

    def trainable_names(self):
        return [n for n, p in self.entries.items() if p.trainable]

    def zero_grads(self):
        for p in self.entries.values():
            p.grad.fill(0.0)

    def copy(self) -> "ParamStore":
        """Deep copy of values and flags; gradients and moments start fresh."""
        out = ParamStore(step_count=self.step_count)
        for name, p in self.entries.items():
            out.add(name, p.value.copy(), p.trainable)
        return out


def kaiming_uniform(rng, fan_in, fan_out):
    """He initialization for layers feeding into a ReLU."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def xavier_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
