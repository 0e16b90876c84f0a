"""Tiny layer system over the autodiff ops: parameter registry plus the
convolution/norm wrappers the network is assembled from.

Initialization is pinned so runs are reproducible: Kaiming fan-in normals for
conv weights, zeros for biases, ones for norm scales.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .autodiff import DEFAULT_DTYPE, Tensor
from .autodiff import functional as F


def kaiming_conv(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(DEFAULT_DTYPE)


def parameter(values: np.ndarray) -> Tensor:
    return Tensor(np.asarray(values, dtype=DEFAULT_DTYPE), requires_grad=True)


class Module:
    """Base class giving name-addressable parameter traversal."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def load_parameters(self, named: dict[str, np.ndarray]) -> None:
        """Install tensors by name; names and shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(named))
        extra = sorted(set(named) - set(own))
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={missing[:5]} extra={extra[:5]}")
        for name, tensor in own.items():
            arr = np.asarray(named[name], dtype=DEFAULT_DTYPE)
            if arr.shape != tensor.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != expected {tensor.shape}")
            tensor.data = arr.copy()
            tensor.grad = None

    def zero_parameters(self) -> None:
        for t in self.parameters():
            t.data = np.zeros_like(t.data)


class Conv2d(Module):
    def __init__(
        self,
        cin: int,
        cout: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        pad_mode: str = "zeros",
        bias: bool = True,
    ):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.pad_mode = pad_mode
        self.weight = parameter(kaiming_conv(rng, (cout, cin, kernel, kernel)))
        self.bias = parameter(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding, pad_mode=self.pad_mode
        )


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, rng: np.random.Generator, kernel: int = 3, bias: bool = True):
        self.weight = parameter(kaiming_conv(rng, (channels, 1, kernel, kernel)))
        self.bias = parameter(np.zeros(channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv2d(x, self.weight, self.bias)


class ChannelLayerNorm(Module):
    """Bias-free normalization across channels at each pixel, eps 1e-6."""

    def __init__(self, channels: int, eps: float = 1e-6):
        self.gamma = parameter(np.ones(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm_channels(x, self.gamma, eps=self.eps)
