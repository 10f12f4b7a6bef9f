"""Synthetic paired RGB/HSI data, camera response projection, augmentation.

Each synthetic cube is a mixture of a few Gaussian-bump spectra (smooth over
the band axis) modulated by low-frequency sinusoid fields (smooth over
space), rescaled into [0.05, 0.95]. The RGB pair is the per-pixel camera
response projection of the cube, so the supervision is exactly consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Rng

BANDS = 31


@dataclass(frozen=True)
class Crf:
    """3 x BANDS nonnegative response weights; each row sums to 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.shape != (3, BANDS):
            raise ValueError(f"CRF must be (3,{BANDS}), got {m.shape}")
        if np.any(m < 0):
            raise ValueError("CRF weights must be nonnegative")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("CRF rows must each sum to 1")


def default_crf() -> Crf:
    """Gaussian response rows centered at the 610/540/470 nm bands, std 3 bands."""
    band = np.arange(BANDS, dtype=np.float64)
    centers = [21.0, 14.0, 7.0]  # (wavelength - 400 nm) / 10 nm
    rows = np.stack([np.exp(-0.5 * ((band - c) / 3.0) ** 2) for c in centers])
    rows /= rows.sum(axis=1, keepdims=True)
    return Crf(rows)


@dataclass
class SpectralSample:
    """Paired cube and RGB condition with shared spatial dims, values in [0,1]."""

    hsi: np.ndarray
    rgb: np.ndarray
    id: str

    def __post_init__(self):
        if self.hsi.ndim != 3 or self.hsi.shape[0] != BANDS:
            raise ValueError(f"hsi must be ({BANDS},H,W), got {self.hsi.shape}")
        if self.rgb.shape != (3,) + self.hsi.shape[1:]:
            raise ValueError(f"rgb shape {self.rgb.shape} does not pair with "
                             f"hsi {self.hsi.shape}")


def project_rgb(hsi: np.ndarray, crf: Crf) -> np.ndarray:
    """Per-pixel matrix-vector product of the CRF with the spectrum."""
    hsi = np.asarray(getattr(hsi, "data", hsi), dtype=np.float64)
    if hsi.ndim != 3 or hsi.shape[0] != crf.matrix.shape[1]:
        raise ValueError(f"band axis {hsi.shape} does not match CRF "
                         f"columns {crf.matrix.shape[1]}")
    return np.einsum("rb,bhw->rhw", crf.matrix, hsi)


def _smooth_field(rng: Rng, h: int, w: int) -> np.ndarray:
    """Mixture of three low-frequency sinusoids over the patch."""
    ii, jj = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    field = np.zeros((h, w))
    for _ in range(3):
        fx = rng.uniform(0.25, 2.0)
        fy = rng.uniform(0.25, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        field += amp * np.sin(2.0 * np.pi * (fx * ii + fy * jj) + phase)
    return field


def gen_synthetic(n: int, h: int, w: int, seed: int,
                  crf: Crf | None = None) -> list[SpectralSample]:
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    crf = crf or default_crf()
    rng = Rng(seed)
    band = np.arange(BANDS, dtype=np.float64)
    samples = []
    for i in range(n):
        k = rng.integers(2, 5)
        cube = np.zeros((BANDS, h, w))
        for _ in range(k):
            center = rng.uniform(0.0, BANDS - 1.0)
            width = rng.uniform(2.0, 8.0)
            spectrum = np.exp(-0.5 * ((band - center) / width) ** 2)
            cube += spectrum[:, None, None] * _smooth_field(rng, h, w)[None, :, :]
        lo, hi = cube.min(), cube.max()
        if hi - lo < 1e-12:
            cube = np.full_like(cube, 0.5)
        else:
            cube = 0.05 + 0.9 * (cube - lo) / (hi - lo)
        samples.append(SpectralSample(hsi=cube, rgb=project_rgb(cube, crf),
                                      id=f"s{i:04d}"))
    return samples


def augment(sample: SpectralSample, seed: int,
            patch: int | None = None) -> SpectralSample:
    """Seeded crop-then-transform; the same transform hits hsi and rgb.

    Transforms are a random multiple of 90 degrees plus independent
    horizontal/vertical flips; the cropped region must be square.
    """
    rng = Rng(seed)
    hsi, rgb = sample.hsi, sample.rgb
    h, w = hsi.shape[1], hsi.shape[2]
    if patch is not None:
        if patch > h or patch > w:
            raise ValueError(f"patch {patch} exceeds sample dims ({h},{w})")
        i0 = rng.integers(0, h - patch)
        j0 = rng.integers(0, w - patch)
        hsi = hsi[:, i0:i0 + patch, j0:j0 + patch]
        rgb = rgb[:, i0:i0 + patch, j0:j0 + patch]
    elif h != w:
        raise ValueError(f"rotations need a square patch, got ({h},{w})")
    k = rng.integers(0, 3)
    flip_h = rng.integers(0, 1) == 1
    flip_v = rng.integers(0, 1) == 1

    def apply(x: np.ndarray) -> np.ndarray:
        x = np.rot90(x, k, axes=(1, 2))
        if flip_h:
            x = x[:, :, ::-1]
        if flip_v:
            x = x[:, ::-1, :]
        return np.ascontiguousarray(x)

    return SpectralSample(hsi=apply(hsi), rgb=apply(rgb), id=sample.id)
