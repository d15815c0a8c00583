"""Total-variation and non-local-means machinery.

The NLM smoother is the edge-preserving average

    NL(x)_k = sum_{l in N(k)} K(k, l) x_l / Z_k,    Z_k = sum_l K(k, l)

with kernel weights taken from a fixed reference image. Patch distances for
every search offset come from 2-D prefix sums (integral images) of the
offset squared-difference image, so each weight costs O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


# ----------------------------------------------------------------------------
# Total variation
# ----------------------------------------------------------------------------

def apply_difference(img: np.ndarray) -> np.ndarray:
    """Forward differences ``[Dx; Dy]`` with zero rows on the far boundary.

    Returns an array of shape ``(2, ny, nx)``.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    g = np.zeros((2,) + img.shape)
    g[0, :, :-1] = img[:, 1:] - img[:, :-1]
    g[1, :-1, :] = img[1:, :] - img[:-1, :]
    return g


def apply_difference_adjoint(g: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`apply_difference`."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 3 or g.shape[0] != 2:
        raise ValueError("expected stacked gradients of shape (2, ny, nx)")
    gx, gy = g
    out = np.zeros(g.shape[1:])
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    out[:-1, :] -= gy[:-1, :]
    out[1:, :] += gy[:-1, :]
    return out


def laplacian(img: np.ndarray) -> np.ndarray:
    """``D^T D img`` (Neumann boundary)."""
    return apply_difference_adjoint(apply_difference(img))


def soft_threshold(x, kappa: float):
    """Proximal map of ``kappa * |x|``: ``sign(x) * max(|x| - kappa, 0)``."""
    if kappa < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def tv_penalty(c_img: np.ndarray, lambda_tv: float) -> float:
    """Anisotropic TV ``lambda_tv * sum |D c|``."""
    return float(lambda_tv * np.abs(apply_difference(c_img)).sum())


# ----------------------------------------------------------------------------
# Non-local means
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NlmParams:
    """Bandwidth ``beta`` (reference-image units), patch and search half-widths."""

    beta: float = 0.5e-4
    patch_half_width: int = 3
    search_half_width: int = 9

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.patch_half_width < 0:
            raise ValueError("patch half-width must be >= 0")
        if self.search_half_width < self.patch_half_width:
            raise ValueError("search half-width must be >= patch half-width")

    @property
    def patch_size(self) -> int:
        return (2 * self.patch_half_width + 1) ** 2


def nlm_weight(ref: np.ndarray, k, l, params: NlmParams) -> float:
    """Kernel weight between pixels ``k`` and ``l`` (each a (row, col) pair).

    Patches are clipped at the border to the offsets valid for both centres,
    and the mean is taken over that overlap.
    """
    ref = np.asarray(ref, dtype=float)
    ny, nx = ref.shape
    W = params.patch_half_width
    (ky, kx), (ly, lx) = k, l
    total, count = 0.0, 0
    for dy in range(-W, W + 1):
        for dx in range(-W, W + 1):
            ay, ax, by, bx = ky + dy, kx + dx, ly + dy, lx + dx
            if 0 <= ay < ny and 0 <= ax < nx and 0 <= by < ny and 0 <= bx < nx:
                total += (ref[ay, ax] - ref[by, bx]) ** 2
                count += 1
    return math.exp(-total / (2.0 * count * params.beta**2))


def _box_sum(a: np.ndarray, w: int) -> np.ndarray:
    """Sum of ``a`` over the (2w+1)^2 window around each pixel, clipped at the border."""
    ny, nx = a.shape
    S = np.zeros((ny + 1, nx + 1))
    S[1:, 1:] = a.cumsum(0).cumsum(1)
    y0 = np.clip(np.arange(ny) - w, 0, ny)
    y1 = np.clip(np.arange(ny) + w + 1, 0, ny)
    x0 = np.clip(np.arange(nx) - w, 0, nx)
    x1 = np.clip(np.arange(nx) + w + 1, 0, nx)
    return (S[np.ix_(y1, x1)] - S[np.ix_(y0, x1)] - S[np.ix_(y1, x0)] + S[np.ix_(y0, x0)])


def _overlap(n: int, d: int) -> tuple[slice, slice]:
    """Index ranges ``k`` and ``k + d`` that both fall in [0, n)."""
    lo, hi = max(0, -d), min(n, n - d)
    return slice(lo, hi), slice(lo + d, hi + d)


class NlmWeights:
    """Frozen NLM kernel for one reference image.

    ``weights[j]`` holds ``K(k, k + offsets[j])`` for every pixel ``k`` (zero
    where ``k + offset`` leaves the image).
    """

    def __init__(self, ref: np.ndarray, params: NlmParams):
        ref = np.asarray(ref, dtype=float)
        if ref.ndim != 2:
            raise ValueError("reference must be a 2-D image")
        self.ref = ref.copy()
        self.params = params
        M, W = params.search_half_width, params.patch_half_width
        ny, nx = ref.shape
        self.offsets = [(dy, dx) for dy in range(-M, M + 1) for dx in range(-M, M + 1)]
        self.weights = np.zeros((len(self.offsets),) + ref.shape)
        inv = 1.0 / (2.0 * params.beta**2)
        for j, (dy, dx) in enumerate(self.offsets):
            (ky, ly), (kx, lx) = _overlap(ny, dy), _overlap(nx, dx)
            if ky.start >= ky.stop or kx.start >= kx.stop:
                continue
            diff2 = np.zeros(ref.shape)
            valid = np.zeros(ref.shape)
            diff2[ky, kx] = (ref[ky, kx] - ref[ly, lx]) ** 2
            valid[ky, kx] = 1.0
            dist = _box_sum(diff2, W)
            count = _box_sum(valid, W)
            w = np.zeros(ref.shape)
            w[ky, kx] = np.exp(-dist[ky, kx] / count[ky, kx] * inv)
            self.weights[j] = w
        self.Z = self.weights.sum(axis=0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ref.shape

    def _gather(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        # out[k] = sum_j weights[j, k] * x[k + offset_j]
        ny, nx = self.shape
        out = np.zeros(self.shape)
        for (dy, dx), w in zip(self.offsets, weights):
            (ky, ly), (kx, lx) = _overlap(ny, dy), _overlap(nx, dx)
            out[ky, kx] += w[ky, kx] * x[ly, lx]
        return out

    def _scatter(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        # Transpose of _gather: out[k + offset_j] += weights[j, k] * x[k]
        ny, nx = self.shape
        out = np.zeros(self.shape)
        for (dy, dx), w in zip(self.offsets, weights):
            (ky, ly), (kx, lx) = _overlap(ny, dy), _overlap(nx, dx)
            out[ly, lx] += w[ky, kx] * x[ky, kx]
        return out

    def smooth(self, img: np.ndarray) -> np.ndarray:
        """Normalised NLM average of ``img``."""
        img = self._check(img)
        return self._gather(img, self.weights) / self.Z

    def smooth_adjoint(self, img: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`smooth`: ``sum_k K(k, l) x_k / Z_k``."""
        img = self._check(img)
        return self._scatter(img / self.Z, self.weights)

    def residual(self, img: np.ndarray) -> np.ndarray:
        """Difference image ``delta = img - NL(img)``."""
        return self._check(img) - self.smooth(img)

    def residual_adjoint(self, img: np.ndarray) -> np.ndarray:
        return self._check(img) - self.smooth_adjoint(img)

    def gram_diagonal(self) -> np.ndarray:
        """Diagonal of ``(I - W)^T (I - W)`` where ``W`` is the smoothing matrix."""
        j0 = self.offsets.index((0, 0))
        self_w = self.weights[j0] / self.Z
        col_sq = self._scatter(1.0 / self.Z**2, self.weights**2)
        return 1.0 - 2.0 * self_w + col_sq

    def _check(self, img):
        img = np.asarray(img, dtype=float)
        if img.shape != self.shape:
            img = img.reshape(self.shape)
        return img


def nlm_smooth(img: np.ndarray, ref: np.ndarray, params: NlmParams) -> np.ndarray:
    """NLM average of ``img`` with weights computed from ``ref``."""
    img = np.asarray(img, dtype=float)
    if img.shape != np.shape(ref):
        raise ValueError("image and reference must share a grid")
    return NlmWeights(ref, params).smooth(img)


def nlm_penalty_and_gradient(p_img: np.ndarray, ref, params: NlmParams | None = None,
                             lambda_nlm: float = 1.0):
    """``lambda * sum_k delta_k^2`` and its gradient w.r.t. the image.

    ``ref`` is a reference image (weights built with ``params``) or a
    prebuilt :class:`NlmWeights`. With ``delta = (I - W) p`` the gradient is
    ``2 lambda (I - W)^T delta``, i.e. ``delta`` minus the transposed
    smoothing of ``delta``.
    """
    weights = ref if isinstance(ref, NlmWeights) else NlmWeights(ref, params or NlmParams())
    delta = weights.residual(p_img)
    value = float(lambda_nlm * np.sum(delta**2))
    grad = 2.0 * lambda_nlm * weights.residual_adjoint(delta)
    return value, grad
