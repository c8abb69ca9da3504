"""End-to-end gradient verification of the model and of each autodiff primitive."""
from __future__ import annotations

import contextlib
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import DataConfig, LossWeights, ModelConfig
from .core import Tensor, corrupt_backward
from .core.gradcheck import check_gradients
from .core import functional as F
from .data import generate_dataset, make_batch
from .losses import SetCriterion
from .model import IAUNet

TOLERANCE = 1e-3
STEP = 1e-4
# Gradient norm treated as zero. Rounding noise of a central difference is
# about eps * |loss| / h ~ 1e-10 here; some groups (key biases, whose effect
# softmax cancels) have exactly zero true gradient.
GRAD_FLOOR = 1e-6


def tiny_model_config(**overrides) -> ModelConfig:
    """32x32 input, N=4 queries, D=16."""
    base = dict(stem_channels=4, encoder_channels=(8, 8, 16, 16), hidden_dim=16, num_queries=4,
                ffn_dim=32, se_reduction=4)
    base.update(overrides)
    return ModelConfig(**base)


def _randn(rng, *shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True)


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def _bn(x, g, b):
    c = x.shape[1]
    return F.batchnorm2d(x, g, b, np.zeros(c), np.ones(c), training=True)


# op name -> (function of the inputs, input factory)
OP_CASES: "OrderedDict[str, tuple[Callable, Callable]]" = OrderedDict([
    ("add", (F.add, lambda r: [_randn(r, 3, 4), _randn(r, 4)])),
    ("sub", (F.sub, lambda r: [_randn(r, 3, 4), _randn(r, 3, 1)])),
    ("mul", (F.mul, lambda r: [_randn(r, 3, 4), _randn(r, 1, 4)])),
    ("div", (F.div, lambda r: [_randn(r, 3, 4), Tensor(r.uniform(0.5, 2.0, (3, 4)), requires_grad=True)])),
    ("neg", (F.neg, lambda r: [_randn(r, 3, 4)])),
    ("power", (lambda x: F.power(x, 1.5), lambda r: [Tensor(r.uniform(0.5, 2.0, (3, 4)), requires_grad=True)])),
    ("exp", (F.exp, lambda r: [_randn(r, 3, 4)])),
    ("log", (F.log, lambda r: [Tensor(r.uniform(0.5, 2.0, (3, 4)), requires_grad=True)])),
    ("relu", (F.relu, lambda r: [_away_from_zero(r, 3, 4)])),
    ("sigmoid", (F.sigmoid, lambda r: [_randn(r, 3, 4)])),
    ("softplus", (F.softplus, lambda r: [_randn(r, 3, 4)])),
    ("sum", (lambda x: F.sum(x, axis=1, keepdims=True), lambda r: [_randn(r, 3, 4)])),
    ("mean", (lambda x: F.mean(x, axis=0), lambda r: [_randn(r, 3, 4)])),
    ("reshape", (lambda x: F.reshape(x, (4, 3)), lambda r: [_randn(r, 3, 4)])),
    ("transpose", (lambda x: F.transpose(x, (2, 0, 1)), lambda r: [_randn(r, 2, 3, 4)])),
    ("broadcast_to", (lambda x: F.broadcast_to(x, (2, 3, 4)), lambda r: [_randn(r, 3, 1)])),
    ("concat", (lambda a, b: F.concat([a, b], axis=1), lambda r: [_randn(r, 2, 3), _randn(r, 2, 2)])),
    ("take", (lambda x: F.take(x, [2, 0, 2], axis=0), lambda r: [_randn(r, 3, 4)])),
    ("matmul", (F.matmul, lambda r: [_randn(r, 2, 3, 4), _randn(r, 4, 5)])),
    ("linear", (F.linear, lambda r: [_randn(r, 2, 3, 4), _randn(r, 5, 4), _randn(r, 5)])),
    ("softmax", (F.softmax_lastdim, lambda r: [_randn(r, 3, 5)])),
    ("log_softmax", (F.log_softmax_lastdim, lambda r: [_randn(r, 3, 5)])),
    ("conv2d", (lambda x, w, b: F.conv2d(x, w, b, stride=2, padding=1),
                lambda r: [_randn(r, 2, 3, 6, 6), _randn(r, 4, 3, 3, 3), _randn(r, 4)])),
    ("depthwise_conv2d", (lambda x, w: F.depthwise_conv2d(x, w, stride=1, padding=1),
                          lambda r: [_randn(r, 2, 3, 5, 5), _randn(r, 3, 1, 3, 3)])),
    ("bilinear_upsample2x", (F.bilinear_upsample2x, lambda r: [_randn(r, 1, 2, 3, 4)])),
    ("batchnorm2d", (_bn, lambda r: [_randn(r, 3, 2, 3, 3), _randn(r, 2, offset=1.0), _randn(r, 2)])),
    ("layer_norm", (F.layer_norm, lambda r: [_randn(r, 3, 6), _randn(r, 6, offset=1.0), _randn(r, 6)])),
])


def op_gradient_error(fn: Callable, inputs: list[Tensor], rng: np.random.Generator) -> float:
    """Worst relative error over the inputs of sum(fn(*inputs) * R)."""
    out_shape = fn(*inputs).shape
    weights = Tensor(rng.standard_normal(out_shape))
    report = check_gradients(lambda: (fn(*inputs) * weights).sum(),
                             {str(i): t for i, t in enumerate(inputs)}, h=STEP)
    return max(report.values())


@dataclass
class GradcheckReport:
    params: dict[str, float] = field(default_factory=dict)   # parameter group -> relative error
    ops: dict[str, float] = field(default_factory=dict)      # primitive -> relative error
    skipped: list[str] = field(default_factory=list)         # groups with no smooth entry
    seconds: float = 0.0
    tolerance: float = TOLERANCE

    def module_worst(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name, err in self.params.items():
            mod = name.split(".")[0]
            out[mod] = max(out.get(mod, 0.0), err)
        return out

    @property
    def failing_params(self) -> list[str]:
        return [n for n, e in self.params.items() if not e < self.tolerance]

    @property
    def failing_ops(self) -> list[str]:
        return [n for n, e in self.ops.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failing_params and not self.failing_ops


def tiny_problem(seed: int = 0, cfg: Optional[ModelConfig] = None):
    """Model, images and targets for the 32x32 check."""
    cfg = cfg or tiny_model_config()
    model = IAUNet(cfg, np.random.default_rng([seed, 0]))
    data_cfg = DataConfig(image_size=32, min_instances=1, max_instances=2, min_axis=4.0, max_axis=7.0)
    images, targets = make_batch(generate_dataset(data_cfg, seed, count=2))
    return model, Tensor(images), targets


def run_gradcheck(seed: int = 0, samples_per_tensor: int = 3, corrupt_op: Optional[str] = None,
                  check_ops: bool = True) -> GradcheckReport:
    start = time.perf_counter()
    rng = np.random.default_rng([seed, 2])
    model, images, targets = tiny_problem(seed)
    criterion = SetCriterion(LossWeights(), model.cfg.num_classes)

    def loss():
        return criterion(model(images).predictions, targets).total

    report = GradcheckReport()
    with corrupt_backward(corrupt_op) if corrupt_op else contextlib.nullcontext():
        report.params = check_gradients(loss, dict(model.named_parameters()), h=STEP,
                                        samples_per_tensor=samples_per_tensor, rng=rng,
                                        floor=GRAD_FLOOR, skipped=report.skipped)
        if check_ops:
            for name, (fn, make) in OP_CASES.items():
                report.ops[name] = op_gradient_error(fn, make(np.random.default_rng([seed, 3])), rng)
    report.seconds = time.perf_counter() - start
    return report
