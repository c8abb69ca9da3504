"""Module containers and the basic layers built on :mod:`.functional`."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import ContractError, ShapeError, Tensor


class Parameter(Tensor):
    """A leaf tensor that an optimizer updates."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                    gain: float = math.sqrt(2.0)) -> np.ndarray:
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    training: bool = True

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # -- traversal ----------------------------------------------------------
    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                for i, m in enumerate(value):
                    yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in getattr(self, "_buffers", {}).items():
            yield prefix + name, buf
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # -- state --------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy ``state`` into the model; every mismatch is reported at once."""
        targets: dict[str, np.ndarray] = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        problems = []
        for name in targets:
            if name not in state:
                problems.append(f"{name}: missing from checkpoint")
            elif np.shape(state[name]) != targets[name].shape:
                problems.append(f"{name}: checkpoint shape {tuple(np.shape(state[name]))} "
                                f"!= model shape {targets[name].shape}")
        for name in state:
            if name not in targets:
                problems.append(f"{name}: unexpected in checkpoint")
        if problems:
            raise ShapeError("incompatible checkpoint:\n  " + "\n  ".join(problems))
        for name, arr in targets.items():
            arr[...] = state[name]


class ModuleList(list):
    """Plain list that :class:`Module` traversal descends into."""


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, bias: bool = True):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = Parameter(rng.uniform(-1, 1, out_ch) / math.sqrt(fan_in)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (channels, 1, kernel, kernel), kernel * kernel))
        self.stride = stride
        self.padding = kernel // 2

    def forward(self, x):
        return F.depthwise_conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        # torch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (d_out, d_in)))
        self.bias = Parameter(rng.uniform(-bound, bound, d_out)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_var"] = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        if self.training and x.shape[0] * x.shape[2] * x.shape[3] < 1:
            raise ContractError("batchnorm2d needs at least one sample in training mode")
        return F.batchnorm2d(x, self.gamma, self.beta, self._buffers["running_mean"],
                             self._buffers["running_var"], self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)
