"""Normalization-free residual U-Net predicting the clean cube directly.

The network outputs a residual on top of a coarse base estimate (one 3x3
conv from RGB), so a freshly initialized model, whose final conv is all
zeros, reproduces the base estimate bit for bit. Timestep information
enters every ResBlock as a per-channel bias produced by one shared
sinusoidal-embedding MLP. The only normalization layer in the whole tree
sits in the final refinement stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gsrm import Gsrm
from .hata import Hata
from .nn import Conv2d, FinalNorm, Linear, Module, count_norm_layers
from .tensor import (Tensor, add_channel_bias, concat, mac_counter, no_grad,
                     silu, split, upsample_nearest2)


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 31
    channel_multipliers: tuple[int, ...] = (1, 1, 1)
    resblocks_per_scale: int = 2
    bands: int = 31
    time_embed_dim: int = 64
    use_gsrm: bool = True
    use_hata: bool = True

    @property
    def scales(self) -> int:
        return len(self.channel_multipliers)


def time_embed(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding: pairs (sin, cos) of t / 10000^(2i/dim)."""
    if t < 0:
        raise ValueError(f"timestep must be >= 0, got {t}")
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    out = np.empty(dim)
    for i in range(dim // 2):
        angle = t / (10000.0 ** (2 * i / dim))
        out[2 * i] = math.sin(angle)
        out[2 * i + 1] = math.cos(angle)
    return out


class ResBlock(Module):
    """Two 3x3 convs with one SiLU, timestep bias after the first conv, no norm."""

    def __init__(self, name: str, channels: int, rng: np.random.Generator):
        super().__init__(name)
        self.channels = channels
        self.conv1 = self.reg_child(Conv2d(f"{name}.conv1", channels, channels, 3,
                                           rng, padding=1))
        self.conv2 = self.reg_child(Conv2d(f"{name}.conv2", channels, channels, 3,
                                           rng, padding=1))

    def __call__(self, x: Tensor, t_bias: Tensor) -> Tensor:
        h = silu(add_channel_bias(self.conv1(x), t_bias))
        return x + self.conv2(h)


class Denoiser(Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig(), seed: int = 0):
        super().__init__("")
        self.config = config
        self.bands = config.bands
        rng = np.random.Generator(np.random.PCG64(seed))
        widths = [config.base_channels * m for m in config.channel_multipliers]
        n = config.scales
        rbs = config.resblocks_per_scale

        self.phi = self.reg_child(Conv2d("phi", 3, config.bands, 3, rng, padding=1))
        self.stem_rgb = self.reg_child(Conv2d("stem_rgb", 3, widths[0], 3, rng, padding=1))
        self.stem_noise = self.reg_child(Conv2d("stem_noise", config.bands, widths[0], 3,
                                                rng, padding=1))
        if config.use_gsrm:
            self.gsrm: Gsrm | None = self.reg_child(Gsrm("gsrm", widths[0], rng))
            self.fuse_stem: Conv2d | None = None
        else:
            self.gsrm = None
            self.fuse_stem = self.reg_child(Conv2d("fuse_stem", 2 * widths[0],
                                                   widths[0], 1, rng))

        self.enc_blocks: list[list[ResBlock]] = []
        self.enc_attn: list[Hata | None] = []
        self.downs: list[Conv2d] = []
        for s in range(n):
            blocks = [self.reg_child(ResBlock(f"enc{s}.rb{i}", widths[s], rng))
                      for i in range(rbs)]
            self.enc_blocks.append(blocks)
            self.enc_attn.append(
                self.reg_child(Hata(f"enc{s}.attn", widths[s], rng))
                if config.use_hata else None)
            if s < n - 1:
                self.downs.append(self.reg_child(
                    Conv2d(f"down{s}", widths[s], widths[s + 1], 3, rng,
                           stride=2, padding=1)))

        self.dec_blocks: list[list[ResBlock]] = []
        self.dec_attn: list[Hata | None] = []
        self.ups: list[Conv2d] = []
        self.fuses: list[Conv2d] = []
        for s in range(n - 1, -1, -1):
            blocks = [self.reg_child(ResBlock(f"dec{s}.rb{i}", widths[s], rng))
                      for i in range(rbs)]
            self.dec_blocks.append(blocks)
            self.dec_attn.append(
                self.reg_child(Hata(f"dec{s}.attn", widths[s], rng))
                if config.use_hata else None)
            if s > 0:
                self.ups.append(self.reg_child(
                    Conv2d(f"up{s - 1}", widths[s], widths[s - 1], 3, rng, padding=1)))
                self.fuses.append(self.reg_child(
                    Conv2d(f"fuse{s - 1}", 2 * widths[s - 1], widths[s - 1], 1, rng)))

        # one shared MLP emits all per-ResBlock channel biases, chunked in order
        self.block_widths = [b.channels
                             for stage in self.enc_blocks + self.dec_blocks
                             for b in stage]
        d = config.time_embed_dim
        self.psi_fc1 = self.reg_child(Linear("psi.fc1", d, d, rng))
        self.psi_fc2 = self.reg_child(Linear("psi.fc2", d, sum(self.block_widths), rng))

        self.final_norm = self.reg_child(FinalNorm("final.norm", widths[0]))
        self.final_conv = self.reg_child(Conv2d("final.conv", widths[0], config.bands,
                                                3, rng, padding=1, zero_init=True))

    def base_estimate(self, x_rgb: Tensor) -> Tensor:
        if x_rgb.ndim != 3 or x_rgb.shape[0] != 3:
            raise ValueError(f"x_rgb must be (3,H,W), got {x_rgb.shape}")
        return self.phi(x_rgb)

    def time_biases(self, t: int) -> list[Tensor]:
        emb = Tensor(time_embed(t, self.config.time_embed_dim), op="time_embed")
        biases = self.psi_fc2(silu(self.psi_fc1(emb)))
        return split(biases, self.block_widths, axis=0)

    def predict_x0(self, x_t: Tensor, x_rgb: Tensor, t: int) -> Tensor:
        cfg = self.config
        if x_t.ndim != 3 or x_t.shape[0] != cfg.bands:
            raise ValueError(f"x_t must be ({cfg.bands},H,W), got {x_t.shape}")
        if x_rgb.ndim != 3 or x_rgb.shape[0] != 3:
            raise ValueError(f"x_rgb must be (3,H,W), got {x_rgb.shape}")
        if x_t.shape[1:] != x_rgb.shape[1:]:
            raise ValueError(f"spatial dims differ: {x_t.shape[1:]} vs {x_rgb.shape[1:]}")
        divisor = 2 ** (cfg.scales - 1)
        h, w = x_t.shape[1], x_t.shape[2]
        if h % divisor or w % divisor:
            raise ValueError(f"spatial dims ({h},{w}) must be divisible by {divisor}")

        x_base = self.base_estimate(x_rgb)
        biases = self.time_biases(t)

        f_rgb = self.stem_rgb(x_rgb)
        f_noise = self.stem_noise(x_t)
        if self.gsrm is not None:
            h_feat = self.gsrm(f_rgb, f_noise)
        else:
            h_feat = self.fuse_stem(concat([f_rgb, f_noise], axis=0))

        bi = 0
        skips: list[Tensor] = []
        for s in range(cfg.scales):
            for block in self.enc_blocks[s]:
                h_feat = block(h_feat, biases[bi])
                bi += 1
            if self.enc_attn[s] is not None:
                h_feat = self.enc_attn[s](h_feat)
            if s < cfg.scales - 1:
                skips.append(h_feat)
                h_feat = self.downs[s](h_feat)

        for i, s in enumerate(range(cfg.scales - 1, -1, -1)):
            for block in self.dec_blocks[i]:
                h_feat = block(h_feat, biases[bi])
                bi += 1
            if self.dec_attn[i] is not None:
                h_feat = self.dec_attn[i](h_feat)
            if s > 0:
                h_feat = self.ups[i](upsample_nearest2(h_feat))
                h_feat = self.fuses[i](concat([h_feat, skips[s - 1]], axis=0))

        residual = self.final_conv(self.final_norm(h_feat))
        return x_base + residual


def base_estimate(x_rgb: Tensor, phi: Conv2d) -> Tensor:
    """Coarse spectral estimate from RGB via a single 3x3 conv."""
    return phi(x_rgb)


def count_params(model: Module) -> int:
    return model.param_count()


def count_flops(model: Denoiser, h: int, w: int, steps: int) -> int:
    """FLOPs of `steps` denoiser evaluations at H x W.

    One forward is measured under the op counter (multiply-accumulates of
    convs, matmuls, and elementwise products), doubled into FLOPs, and
    multiplied by the step count.
    """
    x_t = Tensor(np.zeros((model.bands, h, w)))
    x_rgb = Tensor(np.zeros((3, h, w)))
    with no_grad(), mac_counter() as mc:
        model.predict_x0(x_t, x_rgb, 1)
    return 2 * mc.total * steps


def audit_norm_layers(model: Module) -> int:
    return count_norm_layers(model)
