"""Training loop: per-sample corruption, clean-cube regression, AdamW updates.

Each step draws a batch with replacement from the augmented patch pool,
corrupts every sample at its own uniformly drawn timestep, regresses the
clean cube under the combined pixel/gradient loss, and applies one decoupled
AdamW update at the cosine-annealed learning rate. Validation reconstructs
the val split and keeps the best-PSNR parameter snapshot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SpectralSample, augment
from .denoiser import Denoiser, DenoiserConfig
from .losses import LossConfig, loss_total
from .metrics import evaluate_pair
from .sampler import SamplerConfig, reconstruct
from .schedule import NoiseSchedule, Rng, build_schedule, forward_sample
from .tensor import Tensor, backward, no_grad, scale

_VAL_SEED_STRIDE = 1_000_003


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr0: float = 4e-4
    total_steps: int = 1500
    grad_weight: float = 1.0
    T: int = 5
    delta: float = 0.01
    seed: int = 0
    val_every: int = 250
    patch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "lr0", "total_steps", "T", "val_every",
                     "patch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainState:
    model: Denoiser
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    best_psnr: float = -math.inf
    best_step: int = -1
    best_state: dict[str, np.ndarray] | None = None
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)
    val_history: list[dict[str, float]] = field(default_factory=list)


def init_state(model: Denoiser) -> TrainState:
    zeros = {p.name: np.zeros_like(p.data) for p in model.parameters() if p.trainable}
    return TrainState(model=model, m=zeros,
                      v={k: a.copy() for k, a in zeros.items()})


def cosine_lr(lr0: float, step: int, total_steps: int) -> float:
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def train_step(state: TrainState, batch: list[SpectralSample],
               sched: NoiseSchedule, cfg: TrainConfig, rng: Rng) -> float:
    """One optimizer update over a batch; returns the batch loss."""
    if not batch:
        raise ValueError("empty batch")
    loss_cfg = LossConfig(grad_weight=cfg.grad_weight)
    total = None
    for sample in batch:
        t = rng.integers(1, sched.T)
        x0 = Tensor(sample.hsi, op="x0")
        eps = Tensor(rng.normal(sample.hsi.shape), op="eps")
        x_t = forward_sample(x0, t, eps, sched)
        x0_hat = state.model.predict_x0(x_t, Tensor(sample.rgb, op="x_rgb"), t)
        term = loss_total(x0_hat, x0, loss_cfg)
        total = term if total is None else total + term
    loss = scale(total, 1.0 / len(batch))

    params = [p for p in state.model.parameters() if p.trainable]
    grads = backward(loss, params)
    lr = cosine_lr(cfg.lr0, state.step, cfg.total_steps)
    k = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** k
    bc2 = 1.0 - cfg.beta2 ** k
    for p in params:
        g = grads[p.name].data
        m = state.m[p.name]
        v = state.v[p.name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        p.assign(p.data - lr * (update + cfg.weight_decay * p.data))
    state.step += 1
    return loss.item()


def evaluate_model(model: Denoiser, samples: list[SpectralSample],
                   sched: NoiseSchedule, seed: int,
                   mode: str = "full") -> dict[str, float]:
    """Mean metrics over a sample list.

    mode "full" runs the reverse sweep; mode "base" predicts with the coarse
    RGB head alone (same final [0,1] clamp, same metric code).
    """
    if mode not in ("full", "base"):
        raise ValueError(f"unknown eval mode {mode!r}")
    cfg = SamplerConfig(schedule=sched)
    sums = {"mrae": 0.0, "rmse": 0.0, "psnr": 0.0, "sam": 0.0}
    for i, sample in enumerate(samples):
        if mode == "full":
            x_hat = reconstruct(Tensor(sample.rgb), model, cfg, seed + i).data
        else:
            with no_grad():
                x_hat = np.clip(model.base_estimate(Tensor(sample.rgb)).data, 0.0, 1.0)
        for key, val in evaluate_pair(x_hat, sample.hsi).items():
            sums[key] += val
    return {key: val / len(samples) for key, val in sums.items()}


def fit(cfg: TrainConfig, dataset: dict[str, list[SpectralSample]],
        denoiser_cfg: DenoiserConfig | None = None,
        out_dir: str | Path | None = None) -> TrainState:
    """Run the configured step budget; returns state with the best snapshot.

    `dataset` maps "train" and "val" to sample lists. When `out_dir` is set,
    loss.csv gets one row per step and val.csv one row per evaluation.
    """
    train = dataset.get("train", [])
    if not train:
        raise ValueError("training split is empty")
    val = dataset.get("val", [])
    model = Denoiser(denoiser_cfg or DenoiserConfig(), seed=cfg.seed)
    sched = build_schedule(cfg.T, cfg.delta)
    rng = Rng(cfg.seed)
    state = init_state(model)
    val_seed = cfg.seed * _VAL_SEED_STRIDE + 17

    loss_fh = val_fh = None
    loss_csv = val_csv = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        loss_fh = open(out_dir / "loss.csv", "w", newline="")
        loss_csv = csv.writer(loss_fh)
        loss_csv.writerow(["step", "lr", "loss"])
        val_fh = open(out_dir / "val.csv", "w", newline="")
        val_csv = csv.writer(val_fh)
        val_csv.writerow(["step", "mrae", "rmse", "psnr", "sam"])

    def snapshot_if_best(step: int) -> None:
        metrics = evaluate_model(model, val, sched, val_seed)
        metrics["step"] = step
        state.val_history.append(metrics)
        if val_csv is not None:
            val_csv.writerow([step, metrics["mrae"], metrics["rmse"],
                              metrics["psnr"], metrics["sam"]])
        if metrics["psnr"] > state.best_psnr:
            state.best_psnr = metrics["psnr"]
            state.best_step = step
            state.best_state = {p.name: p.data.copy() for p in model.parameters()}

    try:
        for step in range(cfg.total_steps):
            idx = rng.integers(0, len(train) - 1, n=cfg.batch_size)
            batch = [augment(train[i], seed=rng.integers(0, 2**31 - 1),
                             patch=cfg.patch_size) for i in idx]
            lr = cosine_lr(cfg.lr0, state.step, cfg.total_steps)
            loss = train_step(state, batch, sched, cfg, rng)
            state.loss_history.append((step, lr, loss))
            if loss_csv is not None:
                loss_csv.writerow([step, f"{lr:.8e}", f"{loss:.10e}"])
            if val and (step + 1) % cfg.val_every == 0:
                snapshot_if_best(step + 1)
        if val and cfg.total_steps % cfg.val_every != 0:
            snapshot_if_best(cfg.total_steps)
    finally:
        if loss_fh is not None:
            loss_fh.close()
        if val_fh is not None:
            val_fh.close()

    if state.best_state is not None:
        model.load_state_arrays(state.best_state)
    return state
