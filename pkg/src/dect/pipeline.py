"""Builders that turn a RunConfig into library objects, and the method dispatch."""

from __future__ import annotations

import numpy as np

from .admm import AdmmConfig, LmSettings, fbp_initial_guess, run_admm
from .config import RunConfig
from .fbp import Filter, fbp
from .geometry import (ImageGrid, ScanGeometry, angle_ray_indices, assemble_system_matrix,
                       subsample_angles)
from .phantom import build_suitcase_phantom, objects_from_records
from .physics import (DualSinogram, ImagePair, NoiseModel, kramers_spectrum, load_spectrum, simulate_dual_scan)
from .regularizers import NlmParams
from .ync import ync_reconstruct


def build_grid(cfg: RunConfig) -> ImageGrid:
    return ImageGrid(cfg.grid.nx, cfg.grid.ny, cfg.grid.pixel_size)


def build_geometry(cfg: RunConfig) -> ScanGeometry:
    g = cfg.geometry
    return ScanGeometry.uniform(g.n_angles, g.n_detectors, g.detector_spacing, g.detector_offset)


def build_spectra(cfg: RunConfig):
    out = []
    for spec in (cfg.spectra.low, cfg.spectra.high):
        if spec.file:
            out.append(load_spectrum(spec.file))
        else:
            out.append(kramers_spectrum(spec.kvp, filter_mm_al=spec.filter_mm_al))
    return tuple(out)


def build_noise(cfg: RunConfig) -> NoiseModel | None:
    n = cfg.noise
    if not n.enabled:
        return None
    if n.sigma_e is not None:
        return NoiseModel(n.sigma_e, n.seed)
    if n.snr_db is not None:
        return NoiseModel.from_snr_db(cfg.y0, n.snr_db, n.seed)
    return NoiseModel(0.0, n.seed)


def build_filter(cfg: RunConfig) -> Filter:
    return Filter(cfg.fbp.filter, cfg.fbp.cutoff)


def admm_config(cfg: RunConfig, regularized: bool = True) -> AdmmConfig:
    a = cfg.admm
    out = AdmmConfig(
        penalty_mu=a.penalty_mu, nu=a.nu, u_scale=a.u_scale, lambda_tv=a.lambda_tv,
        lambda_nlm=a.lambda_nlm,
        nlm=NlmParams(a.beta, a.patch_half_width, a.search_half_width),
        max_outer=a.max_outer, inner_tv_iters=a.inner_tv_iters,
        lm=LmSettings(a.lm.max_steps, a.lm.damping, a.lm.factor, cg_tol=a.lm.cg_tol,
                      cg_max_iter=a.lm.cg_max_iter),
        eps_abs=a.eps_abs, eps_rel=a.eps_rel,
    )
    return out if regularized else out.unregularized()


def make_phantom(cfg: RunConfig):
    grid = build_grid(cfg)
    objects = objects_from_records(cfg.phantom.scene) if cfg.phantom.scene else None
    return build_suitcase_phantom(grid, objects)


def simulate(cfg: RunConfig, truth: ImagePair, A=None) -> DualSinogram:
    geom = build_geometry(cfg)
    if A is None:
        A = assemble_system_matrix(truth.grid, geom)
    sl, sh = build_spectra(cfg)
    return simulate_dual_scan(A, truth, sl, sh, cfg.y0, build_noise(cfg))


def reconstruct(cfg: RunConfig, sino: DualSinogram, method: str | None = None, A=None, callback=None):
    """Run one method on the (optionally angle-subsampled) sinogram.

    Returns ``(ImagePair, SolveReport or None)``.
    """
    method = method or cfg.method
    grid = build_grid(cfg)
    geom = build_geometry(cfg)
    if sino.n_rays != geom.n_rays:
        raise ValueError(f"sinogram has {sino.n_rays} rays, configured geometry has {geom.n_rays}")
    if A is None and method.startswith("admm"):
        A = assemble_system_matrix(grid, geom)
    if cfg.stride > 1:
        full = geom
        geom, sino = subsample_angles(full, sino, cfg.stride)
        if A is not None:
            A = A.take_rays(angle_ray_indices(full, cfg.stride), geom)
    sl, sh = build_spectra(cfg)
    filt = build_filter(cfg)
    if method == "fbp":
        m_l = np.where(sino.valid, sino.m_low, 0.0)
        m_h = np.where(sino.valid, sino.m_high, 0.0)
        # Effective-energy linear decomposition of the log data, then FBP.
        (k0, q0), (k1, q1) = sl.mean_basis(), sh.mean_basis()
        det = k0 * q1 - q0 * k1
        a_c = (q1 * m_l - q0 * m_h) / det
        a_p = (k0 * m_h - k1 * m_l) / det
        return ImagePair(grid, fbp(a_c, geom, grid, filt), fbp(a_p, geom, grid, filt)), None
    if method == "ync":
        pair, _ = ync_reconstruct(sino, geom, grid, sl, sh, filt, cfg.ync.median_size, cfg.ync.sigma)
        return pair, None
    if method in ("admm", "admm-noreg"):
        acfg = admm_config(cfg, regularized=(method == "admm"))
        init_kind = cfg.admm.init
        if init_kind == "fbp":
            init = fbp_initial_guess(sino, geom, grid, sl, filt)
        elif init_kind == "ync":
            init, _ = ync_reconstruct(sino, geom, grid, sl, sh, filt, cfg.ync.median_size, cfg.ync.sigma)
        else:
            init = ImagePair.zeros(grid)
        return run_admm(sino, A, sl, sh, acfg, init, callback)
    raise ValueError(f"unknown method {method!r}")
