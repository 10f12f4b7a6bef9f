"""Guided fusion of RGB-conditioned features with noisy-state features.

Both streams are normalized per pixel (each spatial location's channel
vector divided by its Euclidean norm plus a small constant), concatenated
along channels, and passed through a 1x1 -> depthwise 3x3 -> 1x1 bottleneck
with GELU activations.
"""

from __future__ import annotations

import numpy as np

from .nn import Conv2d, Module
from .tensor import Tensor, concat, gelu, l2_normalize


class Gsrm(Module):
    def __init__(self, name: str, channels: int, rng: np.random.Generator,
                 mid_channels: int | None = None, eps_norm: float = 1e-6):
        super().__init__(name)
        mid = 2 * channels if mid_channels is None else mid_channels
        self.eps_norm = eps_norm
        self.conv_in = self.reg_child(Conv2d(f"{name}.conv_in", 2 * channels, mid, 1, rng))
        self.dw = self.reg_child(Conv2d(f"{name}.dw", mid, mid, 3, rng,
                                        padding=1, groups=mid))
        self.conv_out = self.reg_child(Conv2d(f"{name}.conv_out", mid, channels, 1, rng))

    def __call__(self, f_rgb: Tensor, f_noise: Tensor) -> Tensor:
        if f_rgb.shape != f_noise.shape:
            raise ValueError(f"feature shapes differ: {f_rgb.shape} vs {f_noise.shape}")
        fr = l2_normalize(f_rgb, axis=0, eps=self.eps_norm)
        fn = l2_normalize(f_noise, axis=0, eps=self.eps_norm)
        f0 = concat([fr, fn], axis=0)
        return self.conv_out(gelu(self.dw(gelu(self.conv_in(f0)))))


def gsrm_forward(f_rgb: Tensor, f_noise: Tensor, params: Gsrm) -> Tensor:
    return params(f_rgb, f_noise)
