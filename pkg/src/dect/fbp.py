"""Parallel-beam filtered back-projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ImageGrid, ScanGeometry


@dataclass(frozen=True)
class Filter:
    """Ramp filter, optionally Hann-apodised, zeroed above ``cutoff`` x Nyquist."""

    kind: str = "ramp_hann"
    cutoff: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ramp", "ramp_hann"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not 0 < self.cutoff <= 1:
            raise ValueError("cutoff must be in (0, 1]")


def _frequency_response(n_det: int, spacing: float, filt: Filter):
    size = max(64, int(2 ** math.ceil(math.log2(2 * n_det))))
    # Sampled spatial kernel laid out circularly; avoids the DC bias of a
    # bare |f| ramp.
    h = np.zeros(size)
    k = np.arange(size)
    k = np.where(k <= size // 2, k, k - size)
    h[k == 0] = 1.0 / (4.0 * spacing**2)
    odd = k % 2 != 0
    h[odd] = -1.0 / (math.pi * k[odd] * spacing) ** 2
    H = np.real(np.fft.rfft(h))
    f = np.fft.rfftfreq(size)  # cycles/sample, Nyquist = 0.5
    frac = f / 0.5
    window = (frac <= filt.cutoff).astype(float)
    if filt.kind == "ramp_hann":
        window *= 0.5 * (1.0 + np.cos(math.pi * frac / filt.cutoff))
    return size, H * window


def filter_sinogram(sino: np.ndarray, spacing: float = 1.0, filt: Filter = Filter("ramp")) -> np.ndarray:
    """Convolve each detector row with the ramp kernel (times ``spacing``).

    ``sino`` has shape (n_angles, n_detectors); rows are zero-padded to at
    least twice their length before the FFT product.
    """
    sino = np.atleast_2d(np.asarray(sino, dtype=float))
    n_det = sino.shape[-1]
    size, H = _frequency_response(n_det, spacing, filt)
    spec = np.fft.rfft(sino, n=size, axis=-1)
    out = np.fft.irfft(spec * H, n=size, axis=-1)[..., :n_det]
    return spacing * out


def backproject(filtered: np.ndarray, geom: ScanGeometry, grid: ImageGrid) -> np.ndarray:
    """Linearly interpolated back-projection scaled by pi / n_angles."""
    filtered = np.asarray(filtered, dtype=float).reshape(geom.sinogram_shape)
    X, Y = grid.pixel_centers()
    cx, cy = grid.center
    X, Y = X - cx, Y - cy
    n_det = geom.n_detectors
    img = np.zeros(grid.shape)
    for row, theta in zip(filtered, geom.angles):
        s = -X * math.sin(theta) + Y * math.cos(theta)
        u = (s - geom.detector_offset) / geom.detector_spacing + 0.5 * (n_det - 1)
        i0 = np.floor(u).astype(int)
        frac = u - i0
        padded = np.concatenate([[0.0], row, [0.0]])
        lo = np.clip(i0 + 1, 0, n_det + 1)
        hi = np.clip(i0 + 2, 0, n_det + 1)
        inside = (u > -1) & (u < n_det)
        img += np.where(inside, (1 - frac) * padded[lo] + frac * padded[hi], 0.0)
    return img * (math.pi / geom.n_angles)


def fbp(sino: np.ndarray, geom: ScanGeometry, grid: ImageGrid, filt: Filter = Filter()) -> np.ndarray:
    """Filtered back-projection of a line-integral sinogram (flat or 2-D)."""
    sino = np.asarray(sino, dtype=float).reshape(geom.sinogram_shape)
    return backproject(filter_sinogram(sino, geom.detector_spacing, filt), geom, grid)
