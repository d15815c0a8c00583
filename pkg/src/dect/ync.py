"""Sinogram-decomposition baseline (Ying, Naidu and Crawford style).

Each ray's (m_L, m_H) pair is decomposed into Compton and photoelectric line
integrals, zeroed coefficients are inpainted, the photoelectric sinogram is
denoised, and both are reconstructed by FBP.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .fbp import Filter, fbp
from .geometry import ImageGrid, ScanGeometry
from .physics import DualSinogram, ImagePair, Spectrum, model_log_measurements

log = logging.getLogger(__name__)


@dataclass
class DecomposedSinogram:
    """Compton (a_c) and photoelectric (a_p) line-integral sinograms.

    ``zeroed_c`` / ``zeroed_p`` mark rays where that coefficient was negative
    and forced to zero; ``masked`` marks rays with no usable data or a
    failed solve.
    """

    a_c: np.ndarray
    a_p: np.ndarray
    zeroed_c: np.ndarray
    zeroed_p: np.ndarray
    masked: np.ndarray

    @property
    def zero_mask(self) -> np.ndarray:
        return self.zeroed_c | self.zeroed_p | self.masked


def _model(specs, a_c, a_p):
    """Model log measurements and 2x2 Jacobians for both energies."""
    out = [model_log_measurements(s, a_c, a_p) for s in specs]
    m = np.stack([o[0] for o in out])  # (2, n)
    jc = np.stack([o[1] for o in out])
    jp = np.stack([o[2] for o in out])
    return m, jc, jp


def _newton_2d(specs, m, a_c, a_p, max_iter, tol):
    """Damped Newton on the square system m_hat(a_c, a_p) = m, vectorised over rays."""
    a_c, a_p = a_c.copy(), a_p.copy()
    done = np.zeros(m.shape[1], dtype=bool)
    active = np.arange(m.shape[1])
    for _ in range(max_iter + 1):
        ma = m[:, active]
        mh, jc, jp = _model(specs, a_c[active], a_p[active])
        r = ma - mh
        conv = np.max(np.abs(r), axis=0) <= tol
        done[active[conv]] = True
        keep = ~conv
        active, ma, r, jc, jp = active[keep], ma[:, keep], r[:, keep], jc[:, keep], jp[:, keep]
        if active.size == 0 or _ == max_iter:
            break
        f = 0.5 * np.sum(r * r, axis=0)
        det = jc[0] * jp[1] - jp[0] * jc[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            dc = (jp[1] * r[0] - jp[0] * r[1]) / det
            dp = (jc[0] * r[1] - jc[1] * r[0]) / det
        dc = np.where(np.isfinite(dc), dc, 0.0)
        dp = np.where(np.isfinite(dp), dp, 0.0)
        c0, p0 = a_c[active], a_p[active]
        step = np.ones(active.size)
        trial = np.arange(active.size)
        for _bt in range(30):
            tc = c0[trial] + step[trial] * dc[trial]
            tp = p0[trial] + step[trial] * dp[trial]
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                rt = ma[:, trial] - _model(specs, tc, tp)[0]
                ft = 0.5 * np.sum(rt * rt, axis=0)
            trial = trial[~(ft <= f[trial])]
            if trial.size == 0:
                break
            step[trial] *= 0.5
        a_c[active] = c0 + step * dc
        a_p[active] = p0 + step * dp
    return a_c, a_p, done


def _newton_1d(specs, m, a, fixed, which, max_iter, tol):
    """Gauss-Newton for one coefficient with the other held at ``fixed``."""
    for _ in range(max_iter):
        args = (a, fixed) if which == "c" else (fixed, a)
        mh, jc, jp = _model(specs, *args)
        j = jc if which == "c" else jp
        r = m - mh
        g = np.sum(j * r, axis=0)
        h = np.sum(j * j, axis=0)
        step = np.where(h > 0, g / h, 0.0)
        a = a + step
        if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(a))):
            break
    return a


def decompose_sinogram(m_low, m_high, spec_low: Spectrum, spec_high: Spectrum,
                       valid=None, max_iter: int = 50, tol: float = 1e-10,
                       zero_tol: float = 1e-9) -> DecomposedSinogram:
    """Per-ray constrained decomposition of dual-energy log data.

    Solves the unconstrained 2x2 problem by damped Newton from an
    effective-energy linearisation; a negative coefficient is zeroed and the
    other re-solved in 1-D. Only coefficients below ``-zero_tol`` (Compton
    units; scaled by k/q for PE) are flagged, so rounding noise on air rays
    does not trigger inpainting.
    """
    m = np.stack([np.asarray(m_low, float).ravel(), np.asarray(m_high, float).ravel()])
    n = m.shape[1]
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, bool).ravel()
    valid = valid & np.all(np.isfinite(m), axis=0)
    specs = (spec_low.support(), spec_high.support())

    # Effective-energy linearisation m_e ~ k_e a_c + q_e a_p as the start point.
    (k0, q0), (k1, q1) = specs[0].mean_basis(), specs[1].mean_basis()
    det = k0 * q1 - q0 * k1
    mm = np.where(valid, m, 0.0)
    a_c = (q1 * mm[0] - q0 * mm[1]) / det
    a_p = (k0 * mm[1] - k1 * mm[0]) / det

    # Hopeless rays can overflow exp() mid-iteration; they end up masked.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        a_c, a_p, ok = _newton_2d(specs, mm, a_c, a_p, max_iter, tol)
    failed = valid & ~ok
    if failed.any():
        log.warning("%d rays did not converge and are masked", int(failed.sum()))
    masked = ~valid | failed

    raw_c, raw_p = a_c.copy(), a_p.copy()
    neg_c, neg_p = a_c < 0, a_p < 0
    both = neg_c & neg_p
    only_p = neg_p & ~neg_c
    only_c = neg_c & ~neg_p
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if only_p.any():
            sub = mm[:, only_p]
            a_c[only_p] = _newton_1d(specs, sub, a_c[only_p], np.zeros(sub.shape[1]), "c", max_iter, tol)
            a_p[only_p] = 0.0
        if only_c.any():
            sub = mm[:, only_c]
            a_p[only_c] = _newton_1d(specs, sub, a_p[only_c], np.zeros(sub.shape[1]), "p", max_iter, tol)
            a_c[only_c] = 0.0
    a_c[both] = 0.0
    a_p[both] = 0.0
    # The 1-D refit can itself go negative; clamp those too.
    tol_c, tol_p = zero_tol, zero_tol * k0 / q0
    zc = (raw_c < -tol_c) | (a_c < -tol_c)
    zp = (raw_p < -tol_p) | (a_p < -tol_p)
    a_c = np.maximum(a_c, 0.0)
    a_p = np.maximum(a_p, 0.0)
    a_c[masked] = 0.0
    a_p[masked] = 0.0
    return DecomposedSinogram(a_c, a_p, zc & ~masked, zp & ~masked, masked)


def decompose_ray(m_low: float, m_high: float, spec_low: Spectrum, spec_high: Spectrum,
                  max_iter: int = 50, tol: float = 1e-10):
    """Single-ray decomposition: ``(a_c, a_p, zeroed_flag)``.

    Raises ``RuntimeError`` when the solve does not converge.
    """
    d = decompose_sinogram([m_low], [m_high], spec_low, spec_high, max_iter=max_iter, tol=tol)
    if d.masked[0]:
        raise RuntimeError("ray decomposition did not converge")
    return float(d.a_c[0]), float(d.a_p[0]), bool(d.zeroed_c[0] or d.zeroed_p[0])


def inpaint_sinogram(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked entries with the discrete harmonic interpolant of the rest.

    Masked entries solve the 4-neighbour Laplace equation on the sinogram
    lattice with unmasked entries as Dirichlet data.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != mask.shape:
        raise ValueError("values and mask differ in shape")
    if mask.all():
        raise ValueError("cannot inpaint: every entry is masked")
    out = values.copy()
    if not mask.any():
        return out
    v2 = np.atleast_2d(values)
    m2 = np.atleast_2d(mask)
    ny, nx = m2.shape
    unknown = np.flatnonzero(m2)
    pos = -np.ones(m2.size, dtype=np.int64)
    pos[unknown] = np.arange(unknown.size)
    rows, cols = np.divmod(unknown, nx)

    diag = np.zeros(unknown.size)
    rhs = np.zeros(unknown.size)
    ii, jj = [], []
    flat_vals = v2.ravel()
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        r, c = rows + dr, cols + dc
        inside = (r >= 0) & (r < ny) & (c >= 0) & (c < nx)
        diag += inside
        nb = r[inside] * nx + c[inside]
        src = np.flatnonzero(inside)
        is_unknown = pos[nb] >= 0
        ii.append(src[is_unknown])
        jj.append(pos[nb[is_unknown]])
        np.add.at(rhs, src[~is_unknown], flat_vals[nb[~is_unknown]])
    ii, jj = np.concatenate(ii), np.concatenate(jj)
    L = sp.csr_matrix((np.full(ii.size, -1.0), (ii, jj)), shape=(unknown.size,) * 2)
    L = L + sp.diags(diag)
    sol = spla.spsolve(L.tocsc(), rhs)
    flat = out.reshape(-1)
    flat[unknown] = sol
    return out


def denoise_pe_sinogram(a_p: np.ndarray, median_size: int = 3, sigma: float = 1.0) -> np.ndarray:
    """Median filter (2-D) then Gaussian smoothing along the detector axis."""
    a_p = np.asarray(a_p, dtype=float)
    out = ndimage.median_filter(a_p, size=median_size, mode="nearest") if median_size > 1 else a_p
    if sigma > 0:
        out = ndimage.gaussian_filter1d(out, sigma, axis=-1, mode="nearest")
    return out


def ync_reconstruct(sino: DualSinogram, geom: ScanGeometry, grid: ImageGrid,
                    spec_low: Spectrum, spec_high: Spectrum, filt: Filter = Filter(),
                    median_size: int = 3, sigma: float = 1.0):
    """Decompose, inpaint, denoise the PE sinogram and FBP both.

    Returns ``(ImagePair, DecomposedSinogram)``; the decomposition holds the
    cleaned sinograms.
    """
    if sino.n_rays != geom.n_rays:
        raise ValueError(f"sinogram has {sino.n_rays} rays, geometry has {geom.n_rays}")
    shape = geom.sinogram_shape
    dec = decompose_sinogram(sino.m_low, sino.m_high, spec_low, spec_high, valid=sino.valid)
    a_c = dec.a_c.reshape(shape)
    a_p = dec.a_p.reshape(shape)
    mask_c = (dec.zeroed_c | dec.masked).reshape(shape)
    mask_p = (dec.zeroed_p | dec.masked).reshape(shape)
    if mask_c.any():
        a_c = inpaint_sinogram(a_c, mask_c)
    if mask_p.any():
        a_p = inpaint_sinogram(a_p, mask_p)
    a_p = denoise_pe_sinogram(a_p, median_size, sigma)
    c = fbp(a_c, geom, grid, filt)
    p = fbp(a_p, geom, grid, filt)
    cleaned = DecomposedSinogram(a_c.ravel(), a_p.ravel(), dec.zeroed_c, dec.zeroed_p, dec.masked)
    return ImagePair(grid, c, p), cleaned
