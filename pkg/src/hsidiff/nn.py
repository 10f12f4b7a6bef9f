"""Module tree: parameter registration, structural walks, basic layers.

Modules carry an explicit path name; parameters are registered under
`<module path>.<suffix>` so every Parameter name is unique and a checkpoint
manifest can address them.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (Parameter, Tensor, add, add_channel_bias, conv2d, matmul,
                     mul_channel, reshape, standardize)


class Module:
    def __init__(self, name: str):
        self.name = name
        self._params: list[Parameter] = []
        self._children: list["Module"] = []

    def reg_param(self, data: np.ndarray, suffix: str, trainable: bool = True) -> Parameter:
        p = Parameter(data, f"{self.name}.{suffix}", trainable)
        self._params.append(p)
        return p

    def reg_child(self, child: "Module") -> "Module":
        self._children.append(child)
        return child

    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out

    def modules(self) -> Iterator["Module"]:
        yield self
        for c in self._children:
            yield from c.modules()

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters() if p.trainable)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"missing parameter {p.name!r} in state")
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name!r}: "
                                 f"{state[p.name].shape} vs {p.data.shape}")
            p.assign(state[p.name].astype(np.float64))


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    """Stored conv weights/bias plus the call-time geometry."""

    def __init__(self, name: str, cin: int, cout: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 pad_mode: str = "zero", groups: int = 1, zero_init: bool = False):
        super().__init__(name)
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode
        self.groups = groups
        wshape = (cout, cin // groups, kernel, kernel)
        if zero_init:
            wdata = np.zeros(wshape)
        else:
            wdata = fan_in_uniform(rng, wshape, (cin // groups) * kernel * kernel)
        self.weight = self.reg_param(wdata, "weight")
        self.bias = self.reg_param(np.zeros(cout), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight.tensor, self.bias.tensor,
                      stride=self.stride, padding=self.padding,
                      pad_mode=self.pad_mode, groups=self.groups)


class Linear(Module):
    def __init__(self, name: str, cin: int, cout: int, rng: np.random.Generator):
        super().__init__(name)
        self.weight = self.reg_param(fan_in_uniform(rng, (cout, cin), cin), "weight")
        self.bias = self.reg_param(np.zeros(cout), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 1:
            raise ValueError(f"Linear expects a vector, got shape {x.shape}")
        y = reshape(matmul(self.weight.tensor, reshape(x, (x.size, 1))), (-1,))
        return add(y, self.bias.tensor)


class FinalNorm(Module):
    """Whole-feature standardization with per-channel scale/shift.

    The single normalization layer the denoiser is allowed to contain.
    """

    def __init__(self, name: str, channels: int, eps: float = 1e-6):
        super().__init__(name)
        self.eps = eps
        self.gamma = self.reg_param(np.ones(channels), "gamma")
        self.beta = self.reg_param(np.zeros(channels), "beta")

    def __call__(self, x: Tensor) -> Tensor:
        return add_channel_bias(mul_channel(standardize(x, self.eps),
                                            self.gamma.tensor),
                                self.beta.tensor)


def count_norm_layers(model: Module) -> int:
    """Structural audit: number of normalization layers in the module tree."""
    return sum(1 for m in model.modules() if isinstance(m, FinalNorm))
