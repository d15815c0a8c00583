"""Direct (non-accelerated) NLM reference implementations for tests."""

import math

import numpy as np


def quadruple_loop_smooth(img, ref, beta, W, M):
    """Literal loops over pixels, search offsets and patch offsets."""
    ny, nx = ref.shape
    out = np.zeros_like(img, dtype=float)
    for ky in range(ny):
        for kx in range(nx):
            num = den = 0.0
            for ly in range(max(0, ky - M), min(ny, ky + M + 1)):
                for lx in range(max(0, kx - M), min(nx, kx + M + 1)):
                    total, count = 0.0, 0
                    for dy in range(-W, W + 1):
                        for dx in range(-W, W + 1):
                            a = (ky + dy, kx + dx)
                            b = (ly + dy, lx + dx)
                            if 0 <= a[0] < ny and 0 <= a[1] < nx and 0 <= b[0] < ny and 0 <= b[1] < nx:
                                total += (ref[a] - ref[b]) ** 2
                                count += 1
                    w = math.exp(-total / (2 * count * beta**2))
                    num += w * img[ly, lx]
                    den += w
            out[ky, kx] = num / den
    return out


def direct_weight_matrix(ref, beta, W, M):
    """Dense N x N kernel matrix K[k, l], one pixel at a time via NaN-padded patches."""
    ny, nx = ref.shape
    pad = np.pad(ref.astype(float), W, constant_values=np.nan)
    K = np.zeros((ny * nx, ny * nx))
    for ky in range(ny):
        for kx in range(nx):
            pk = pad[ky:ky + 2 * W + 1, kx:kx + 2 * W + 1]
            ly = np.arange(max(0, ky - M), min(ny, ky + M + 1))
            lx = np.arange(max(0, kx - M), min(nx, kx + M + 1))
            LY, LX = np.meshgrid(ly, lx, indexing="ij")
            win = np.lib.stride_tricks.sliding_window_view(pad, (2 * W + 1, 2 * W + 1))
            pl = win[LY, LX]
            sq = (pl - pk) ** 2
            d = np.nanmean(sq.reshape(sq.shape[0], sq.shape[1], -1), axis=-1)
            K[ky * nx + kx, (LY * nx + LX).ravel()] = np.exp(-d / (2 * beta**2)).ravel()
    return K


def direct_smooth(img, ref, beta, W, M):
    K = direct_weight_matrix(ref, beta, W, M)
    return ((K @ img.ravel()) / K.sum(1)).reshape(img.shape), K
