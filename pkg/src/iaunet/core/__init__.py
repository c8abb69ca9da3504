"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""
from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import BatchNorm2d, Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module, ModuleList, Parameter
from .optim import AdamW, adamw_step, cosine_lr
from .tensor import ContractError, NumericError, ShapeError, Tensor, corrupt_backward, no_grad

__all__ = [
    "functional", "Tensor", "Parameter", "Module", "ModuleList", "Conv2d", "DepthwiseConv2d",
    "Linear", "BatchNorm2d", "LayerNorm", "AdamW", "adamw_step", "cosine_lr", "no_grad",
    "corrupt_backward", "ShapeError", "NumericError", "ContractError", "CheckpointError",
    "save_checkpoint", "load_checkpoint",
]
