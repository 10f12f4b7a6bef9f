"""Linear noise schedule on sqrt(alphabar) and the forward corruption process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, scale


@dataclass(frozen=True)
class NoiseSchedule:
    """Derived arrays of the schedule; indexed t = 0..T (alpha/beta: t = 1..T)."""

    T: int
    delta: float
    sqrt_alphabar: np.ndarray
    alphabar: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


def build_schedule(T: int, delta: float) -> NoiseSchedule:
    """sqrt(alphabar) falls linearly from 1 at t=0 to delta at t=T.

    Computed as (1 - t/T) + delta*(t/T), which is algebraically the same as
    1 - (1-delta)*t/T but lands on both endpoints exactly in float64.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    t = np.arange(T + 1, dtype=np.float64)
    frac = t / T
    sqrt_ab = (1.0 - frac) + delta * frac
    alphabar = sqrt_ab * sqrt_ab
    alpha = alphabar[1:] / alphabar[:-1]
    beta = 1.0 - alpha
    for arr in (sqrt_ab, alphabar, alpha, beta):
        arr.flags.writeable = False
    return NoiseSchedule(T=T, delta=delta, sqrt_alphabar=sqrt_ab,
                         alphabar=alphabar, alpha=alpha, beta=beta)


def forward_sample(x0: Tensor, t: int, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Corrupted state x_t = sqrt(alphabar_t)*x0 + sqrt(1-alphabar_t)*eps."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"step {t} outside 1..{sched.T}")
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    sa = float(sched.sqrt_alphabar[t])
    sn = float(np.sqrt(1.0 - sched.alphabar[t]))
    return add(scale(x0, sa), scale(eps, sn))


class Rng:
    """Seedable randomness source.

    Standard-normal draws use numpy's PCG64 generator with the ziggurat
    normal sampler; identical seeds reproduce identical streams.
    """

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high_inclusive: int, n: int | None = None):
        out = self._gen.integers(low, high_inclusive + 1, size=n)
        return out if n is not None else int(out)


def sample_eps(shape, seed: int) -> Tensor:
    """Fresh standard-normal tensor, reproducible by seed."""
    return Tensor(Rng(seed).normal(shape), op="sample_eps")
