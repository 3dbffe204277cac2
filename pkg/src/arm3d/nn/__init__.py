from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (LayerSpec, Tape, backward, dense_stack, init_params,
                     mlp_forward, softmax_rows)
from .optim import OptimConfig, optimizer_step, step_decay_lr
from .params import Param, ParamStore

__all__ = [
    "LayerSpec", "Tape", "backward", "dense_stack", "init_params",
    "mlp_forward", "softmax_rows", "OptimConfig", "optimizer_step",
    "step_decay_lr", "Param", "ParamStore", "save_checkpoint",
    "load_checkpoint",
]
