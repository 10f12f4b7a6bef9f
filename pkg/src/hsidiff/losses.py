"""Training losses: pixel MSE plus Sobel-domain gradient consistency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, add, conv2d, mul, scale, sub, tensor_mean

SOBEL_H = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T.copy()


@dataclass(frozen=True)
class LossConfig:
    grad_weight: float = 1.0
    sobel_h: np.ndarray = field(default_factory=lambda: SOBEL_H)
    sobel_v: np.ndarray = field(default_factory=lambda: SOBEL_V)

    def __post_init__(self):
        if self.grad_weight < 0:
            raise ValueError(f"grad_weight must be >= 0, got {self.grad_weight}")


def loss_mse(x0_hat: Tensor, x0: Tensor) -> Tensor:
    if x0_hat.shape != x0.shape:
        raise ValueError(f"shape mismatch: {x0_hat.shape} vs {x0.shape}")
    d = sub(x0_hat, x0)
    return tensor_mean(mul(d, d))


def _sobel_response(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Per-band Sobel response via a depthwise conv with reflect padding."""
    c = x.shape[0]
    weight = Tensor(np.broadcast_to(kernel, (c, 1, 3, 3)).copy(), op="sobel_kernel")
    bias = Tensor(np.zeros(c), op="sobel_bias")
    return conv2d(x, weight, bias, padding=1, pad_mode="reflect", groups=c)


def loss_grad(x0_hat: Tensor, x0: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum over both Sobel directions of the mean squared response difference."""
    if x0_hat.shape != x0.shape:
        raise ValueError(f"shape mismatch: {x0_hat.shape} vs {x0.shape}")
    total = None
    for kernel in (cfg.sobel_h, cfg.sobel_v):
        d = sub(_sobel_response(x0_hat, kernel), _sobel_response(x0, kernel))
        term = tensor_mean(mul(d, d))
        total = term if total is None else add(total, term)
    return total


def loss_total(x0_hat: Tensor, x0: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    if cfg.grad_weight == 0.0:
        return loss_mse(x0_hat, x0)
    return add(loss_mse(x0_hat, x0), scale(loss_grad(x0_hat, x0, cfg), cfg.grad_weight))
