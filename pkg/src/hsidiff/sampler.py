"""Deterministic iterative-refinement sampling from Gaussian noise under RGB guidance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, Rng
from .tensor import Tensor, no_grad


@dataclass
class SamplerConfig:
    schedule: NoiseSchedule
    record_trajectory: bool = False


def ddim_step(x_t: Tensor, x0_hat: Tensor, t: int, sched: NoiseSchedule) -> Tensor:
    """One deterministic reverse step x_t -> x_{t-1} given the clean estimate.

    The implied noise (x_t - sqrt(alphabar_t)*x0_hat)/sqrt(1-alphabar_t) is
    reused, so sigma_t = 0 throughout. The t=1 terminal case returns x0_hat
    directly and is the caller's branch, not this function's.
    """
    if t < 2:
        raise ValueError(f"ddim_step needs t >= 2 (terminal branch handles t=1), got {t}")
    if t > sched.T:
        raise ValueError(f"step {t} outside 2..{sched.T}")
    sa_t = sched.sqrt_alphabar[t]
    sa_prev = sched.sqrt_alphabar[t - 1]
    sn_t = np.sqrt(1.0 - sched.alphabar[t])
    sn_prev = np.sqrt(1.0 - sched.alphabar[t - 1])
    eps_implied = (x_t.data - sa_t * x0_hat.data) / sn_t
    return Tensor(sa_prev * x0_hat.data + sn_prev * eps_implied, op="ddim_step")


def reconstruct(x_rgb: Tensor, denoiser, cfg: SamplerConfig, seed: int,
                trajectory: list | None = None) -> Tensor:
    """Full reverse sweep t = T..1 from seeded Gaussian noise.

    `denoiser` needs a `bands` attribute and predict_x0(x_t, x_rgb, t).
    Output is clamped to [0, 1] once at the very end; intermediate states are
    never clamped so the step algebra stays exact.
    """
    if x_rgb.ndim != 3 or x_rgb.shape[0] != 3:
        raise ValueError(f"x_rgb must be (3,H,W), got {x_rgb.shape}")
    sched = cfg.schedule
    _, h, w = x_rgb.shape
    with no_grad():
        x_t = Tensor(Rng(seed).normal((denoiser.bands, h, w)), op="x_T")
        if trajectory is not None and cfg.record_trajectory:
            trajectory.append(x_t)
        for t in range(sched.T, 0, -1):
            x0_hat = denoiser.predict_x0(x_t, x_rgb, t)
            x_t = ddim_step(x_t, x0_hat, t, sched) if t > 1 else x0_hat
            if trajectory is not None and cfg.record_trajectory:
                trajectory.append(x_t)
        return Tensor(np.clip(x_t.data, 0.0, 1.0), op="reconstruct")
