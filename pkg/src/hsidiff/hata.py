"""Channel-transposed attention with a gated depthwise local branch.

The attention map is C x C regardless of spatial size: queries and keys are
flattened to per-channel HW vectors, L2-normalized, and their Gram matrix is
softmaxed row-wise after division by a learnable positive temperature. A
local branch of two depthwise 3x3 convolutions around a GELU produces both a
sigmoid gate for the attention output and an additive term.
"""

from __future__ import annotations

import numpy as np

from .nn import Conv2d, Module
from .tensor import (Tensor, chunk, exp, gelu, l2_normalize, matmul, mul,
                     mul_scalar, neg, reshape, sigmoid, softmax, transpose)

_NORM_EPS = 1e-12


class Hata(Module):
    def __init__(self, name: str, channels: int, rng: np.random.Generator):
        super().__init__(name)
        self.channels = channels
        self.qkv = self.reg_child(Conv2d(f"{name}.qkv", channels, 3 * channels, 1, rng))
        # temperature kept positive by storing its log; exp(0) = 1 at init
        self.log_alpha = self.reg_param(np.zeros(1), "log_alpha")
        self.lpe_dw1 = self.reg_child(Conv2d(f"{name}.lpe_dw1", channels, channels, 3,
                                             rng, padding=1, groups=channels))
        self.lpe_dw2 = self.reg_child(Conv2d(f"{name}.lpe_dw2", channels, channels, 3,
                                             rng, padding=1, groups=channels))
        self.out_proj = self.reg_child(Conv2d(f"{name}.out_proj", channels, channels, 1, rng))

    def attention(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (row-stochastic C x C map, V as (C,H,W), V flattened to (C,HW))."""
        q, k, v = chunk(self.qkv(x), 3, axis=0)
        c, h, w = v.shape
        qf = reshape(q, (c, h * w))
        kf = reshape(k, (c, h * w))
        vf = reshape(v, (c, h * w))
        qn = l2_normalize(qf, axis=1, eps=_NORM_EPS)
        kn = l2_normalize(kf, axis=1, eps=_NORM_EPS)
        logits = mul_scalar(matmul(qn, transpose(kn)), exp(neg(self.log_alpha.tensor)))
        return softmax(logits, axis=1), v, vf

    def __call__(self, x: Tensor) -> Tensor:
        attn, v, vf = self.attention(x)
        x_attn = self.out_proj(reshape(matmul(attn, vf), v.shape))
        x_lpe = self.lpe_dw2(gelu(self.lpe_dw1(v)))
        return mul(x_attn, sigmoid(x_lpe)) + x_lpe


def hata_forward(x: Tensor, params: Hata) -> Tensor:
    return params(x)


def attention_core_macs(channels: int, h: int, w: int) -> int:
    """Analytic multiply-accumulate count of one forward at the given size.

    Every term except the C^2 temperature scaling grows linearly with H*W,
    which is the whole point of transposing the attention to channels.
    """
    c, hw = channels, h * w
    macs = hw * c * (3 * c)          # qkv projection
    macs += 2 * c * hw               # q/k normalization square-accumulates
    macs += c * c * hw               # normalized Gram matrix
    macs += c * c                    # temperature scaling
    macs += c * c * hw               # attention applied to V
    macs += hw * c * c               # output projection
    macs += 2 * hw * c * 9           # two depthwise 3x3 convs
    macs += hw * c                   # sigmoid gate product
    return macs


def measured_attention_macs(params: Hata, h: int, w: int, seed: int = 0) -> int:
    """Run one forward under the op counter and report the measured MACs."""
    from .tensor import mac_counter

    rng = np.random.Generator(np.random.PCG64(seed))
    x = Tensor(rng.uniform(-1.0, 1.0, size=(params.channels, h, w)))
    with mac_counter() as mc:
        params(x)
    return mc.total
