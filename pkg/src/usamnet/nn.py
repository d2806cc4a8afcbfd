"""Parameter containers: a small Module base plus the conv and batch-norm layers."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import ops
from .ops import ConvSpec
from .tensor import Tensor


class Module:
    """Registers Tensor attributes as parameters and Module attributes as children."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, each in registration order."""
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        for name, p in self.named_parameters():
            np.copyto(p.data, state[name], casting="same_kind")
        for name, b in self.named_buffers():
            np.copyto(b, state[name], casting="same_kind")

    def astype(self, dtype) -> "Module":
        """Convert every parameter and buffer in place to ``dtype``."""
        for m in self.modules():
            for name, p in m._params.items():
                p.data = p.data.astype(dtype)
                p.grad = None
            for name, b in list(m._buffers.items()):
                m.register_buffer(name, b.astype(dtype))
        return self


class Conv2d(Module):
    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        self.weight = Tensor(np.zeros((spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)), requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True)

    @property
    def fan_in(self) -> int:
        return self.spec.in_channels * self.spec.kernel_h * self.spec.kernel_w

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.spec, self.weight, self.bias)


class ConvTranspose2d(Module):
    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        self.weight = Tensor(np.zeros((spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w)), requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True)

    @property
    def fan_in(self) -> int:
        # same convention as torch: weight.size(1) * receptive field
        return self.spec.out_channels * self.spec.kernel_h * self.spec.kernel_w

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.spec, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(num_features, dtype=np.float32))
        self.register_buffer("running_var", np.ones(num_features, dtype=np.float32))

    def __call__(self, x: Tensor, training: Optional[bool] = None) -> Tensor:
        training = self.training if training is None else training
        return ops.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var, training, self.momentum, self.eps)
