"""
Parameter containers and the basic trainable layers.
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from services import numerics as nx
from services.numerics import Parameter, Tensor
from utils.errors import DimensionError, ParameterMismatchError

logger = logging.getLogger(__name__)


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    """Fan-in scaled uniform draw: U(-b, b) with b = sqrt(1 / fan_in)."""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class for anything that owns parameters.

    Parameters are discovered from instance attributes (directly, inside
    sub-modules, or inside lists and dicts of either) in attribute order,
    so naming is stable across builds. A parameter reachable under two
    names is reported once, under the first.
    """

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self, prefix: str, value) -> Iterator[Tuple[str, object]]:
        if isinstance(value, (Parameter, Module)):
            yield prefix, value
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                yield from self._children(f"{prefix}.{i}", item)
        elif isinstance(value, dict):
            for key, item in value.items():
                yield from self._children(f"{prefix}.{key}", item)

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        seen = set()
        result = []
        for name, value in vars(self).items():
            if name.startswith('_'):
                continue
            for path, child in self._children(f"{prefix}{name}", value):
                if isinstance(child, Parameter):
                    pairs = [(path, child)]
                else:
                    pairs = child.named_parameters(prefix=f"{path}.")
                for full_name, param in pairs:
                    if id(param) not in seen:
                        seen.add(id(param))
                        result.append((full_name, param))
        return result

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_parameters(self) -> None:
        for p in self.parameters():
            p.assign(np.zeros_like(p.data))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy arrays into the parameters; names and shapes must match exactly."""
        own = OrderedDict(self.named_parameters())
        missing = [name for name in own if name not in state]
        extra = [name for name in state if name not in own]
        if missing:
            raise ParameterMismatchError(f"missing parameter '{missing[0]}'", parameter=missing[0])
        if extra:
            raise ParameterMismatchError(f"unexpected parameter '{extra[0]}'", parameter=extra[0])
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ParameterMismatchError(
                    f"parameter '{name}' has shape {list(value.shape)} in the checkpoint, "
                    f"model expects {list(param.shape)}",
                    parameter=name,
                )
        for name, param in own.items():
            param.assign(np.asarray(state[name], dtype=param.dtype))

    def flops(self, h: int, w: int) -> int:
        return 0


class Conv2d(Module):
    """2-D convolution with 'same' padding by default."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, bias: bool = True, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_size, kernel_size),
                                             fan_in, dtype))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return nx.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        k, p, s = self.kernel_size, self.padding, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def flops(self, h: int, w: int) -> int:
        oh, ow = self.output_size(h, w)
        return 2 * self.out_channels * self.in_channels * self.kernel_size ** 2 * oh * ow


class GroupedConv2d(Module):
    """Convolution whose channels split into independent groups."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, groups: int,
                 rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        if in_channels % groups or out_channels % groups:
            raise DimensionError(f"channels {in_channels}->{out_channels} not divisible into {groups} groups")
        self.groups = groups
        self.group_in = in_channels // groups
        self.convs = [Conv2d(self.group_in, out_channels // groups, kernel_size, rng, bias=bias, dtype=dtype)
                      for _ in range(groups)]

    def forward(self, x: Tensor) -> Tensor:
        parts = [conv(x[:, g * self.group_in:(g + 1) * self.group_in]) for g, conv in enumerate(self.convs)]
        return nx.concat(parts, axis=1)

    def flops(self, h: int, w: int) -> int:
        return sum(conv.flops(h, w) for conv in self.convs)


class DepthwiseConv2d(Module):
    """Per-channel convolution with 'same' padding."""

    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.channels = channels
        self.kernel_size = kernel_size
        fan_in = kernel_size * kernel_size
        self.weight = Parameter(uniform_init(rng, (channels, 1, kernel_size, kernel_size), fan_in, dtype))
        self.bias = Parameter(uniform_init(rng, (channels,), fan_in, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return nx.depthwise_conv2d(x, self.weight, self.bias, padding=self.kernel_size // 2)

    def flops(self, h: int, w: int) -> int:
        return 2 * self.channels * self.kernel_size ** 2 * h * w


class Linear(Module):
    """Affine map over the last axis; weight is [out, in]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return nx.linear(x, self.weight, self.bias)

    def flops_per_token(self) -> int:
        return 2 * self.in_features * self.out_features


class CausalConv1d(Module):
    """Depthwise causal convolution along the sequence axis of [N, D, L]."""

    def __init__(self, channels: int, width: int, rng: np.random.Generator, dtype=np.float32):
        self.channels = channels
        self.width = width
        self.weight = Parameter(uniform_init(rng, (channels, width), width, dtype))
        self.bias = Parameter(uniform_init(rng, (channels,), width, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return nx.causal_conv1d(x, self.weight, self.bias)

    def flops_per_token(self) -> int:
        return 2 * self.channels * self.width
