"""Evaluation metrics for reconstructed cubes (plain array math, no graph).

PSNR uses peak 1.0 over normalized data and the whole cube; SAM is the mean
per-pixel angle between spectral vectors, in degrees. MRAE's denominator is
floored at 1e-4 so near-zero synthetic values cannot blow up the ratio.
"""

from __future__ import annotations

import math

import numpy as np

MRAE_FLOOR = 1e-4
SAM_EPS = 1e-8


def _as_arrays(x_hat, x) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(x_hat, "data", x_hat), dtype=np.float64)
    b = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def metric_mrae(x_hat, x) -> float:
    a, b = _as_arrays(x_hat, x)
    return float(np.mean(np.abs(a - b) / np.maximum(b, MRAE_FLOOR)))


def metric_rmse(x_hat, x) -> float:
    a, b = _as_arrays(x_hat, x)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def metric_psnr(x_hat, x) -> float:
    """Peak-1.0 PSNR in dB; returns math.inf when the inputs are identical."""
    a, b = _as_arrays(x_hat, x)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def metric_sam(x_hat, x) -> float:
    """Mean spectral angle over pixels, in degrees; vectors run along axis 0."""
    a, b = _as_arrays(x_hat, x)
    if a.ndim != 3:
        raise ValueError(f"expected (B,H,W) cubes, got shape {a.shape}")
    av = a.reshape(a.shape[0], -1)
    bv = b.reshape(b.shape[0], -1)
    dots = (av * bv).sum(axis=0)
    na = np.sqrt((av * av).sum(axis=0))
    nb = np.sqrt((bv * bv).sum(axis=0))
    cosang = np.clip(dots / ((na + SAM_EPS) * (nb + SAM_EPS)), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosang)).mean())


def evaluate_pair(x_hat, x) -> dict[str, float]:
    return {
        "mrae": metric_mrae(x_hat, x),
        "rmse": metric_rmse(x_hat, x),
        "psnr": metric_psnr(x_hat, x),
        "sam": metric_sam(x_hat, x),
    }
