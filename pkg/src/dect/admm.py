"""ADMM reconstruction of Compton and photoelectric images.

Splitting ``z = C theta`` with ``theta = (c, p)`` and four auxiliary blocks

    t = c      (Compton data block)
    u = p      (photoelectric data block, carries the NLM term)
    v = D c    (TV block)
    s = c      (non-negativity block)

and block balancing ``Lambda = diag(1, u_scale, sqrt(nu), 1)``. The augmented
Lagrangian uses scaled duals: ``(mu/2) || Lambda (z - C theta - eta) ||^2``,
so the dual step is ``eta <- eta - (z - C theta)``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse.linalg as spla

from .fbp import Filter, fbp
from .geometry import ScanGeometry, SystemMatrix
from .physics import DataFidelity, DualSinogram, ImagePair, Spectrum, effective_attenuation_scale
from .regularizers import (NlmParams, NlmWeights, apply_difference, apply_difference_adjoint,
                           laplacian, soft_threshold, tv_penalty)

log = logging.getLogger(__name__)


class AdmmError(RuntimeError):
    """Numerical failure inside the solver (non-finite values, CG breakdown)."""


@dataclass(frozen=True)
class LmSettings:
    max_steps: int = 3
    damping: float = 1e-3
    factor: float = 10.0
    max_rejects: int = 8
    cg_tol: float = 1e-6
    cg_max_iter: int = 50


@dataclass(frozen=True)
class AdmmConfig:
    penalty_mu: float = 1.0
    nu: float = 1.0
    u_scale: float = 1e-5
    lambda_tv: float = 0.01
    lambda_nlm: float = 1.0
    nlm: NlmParams = NlmParams()
    max_outer: int = 30
    inner_tv_iters: int = 50
    lm: LmSettings = LmSettings()
    eps_abs: float = 1e-4
    eps_rel: float = 1e-3
    theta_cg_tol: float = 1e-8
    theta_cg_max_iter: int = 1000

    def __post_init__(self):
        for name in ("penalty_mu", "u_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("nu", "lambda_tv", "lambda_nlm", "eps_abs", "eps_rel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.max_outer < 1 or self.inner_tv_iters < 1:
            raise ValueError("iteration counts must be >= 1")

    def unregularized(self) -> "AdmmConfig":
        return replace(self, lambda_tv=0.0, lambda_nlm=0.0)


@dataclass
class AdmmState:
    c: np.ndarray
    p: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray
    eta_t: np.ndarray
    eta_u: np.ndarray
    eta_v: np.ndarray
    eta_s: np.ndarray
    mu: float
    nu: float
    u_scale: float
    outer: int = 0
    nlm_ref: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @classmethod
    def initial(cls, c, p, cfg: AdmmConfig) -> "AdmmState":
        """Consistent start ``z = C theta`` with zero duals."""
        c = np.array(c, dtype=float)
        p = np.array(p, dtype=float)
        if c.ndim != 2 or c.shape != p.shape:
            raise ValueError("c and p must be 2-D images of the same shape")
        v = apply_difference(c)
        z = np.zeros_like
        return cls(c, p, c.copy(), p.copy(), v, np.maximum(c, 0.0),
                   z(c), z(p), z(v), z(c), cfg.penalty_mu, cfg.nu, cfg.u_scale,
                   nlm_ref=c.copy())

    def z_blocks(self):
        return self.t, self.u, self.v, self.s

    def c_theta(self):
        """``C theta`` as (t, u, v, s)-shaped blocks."""
        return self.c, self.p, apply_difference(self.c), self.c

    def copy(self) -> "AdmmState":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, val in kw.items():
            if isinstance(val, np.ndarray):
                kw[k] = val.copy()
        kw["flags"] = list(self.flags)
        return AdmmState(**kw)


# ----------------------------------------------------------------------------
# Closed-form updates
# ----------------------------------------------------------------------------

def update_tv_v(state: AdmmState, lambda_tv: float) -> np.ndarray:
    """``v = S_{lambda_tv/(mu nu)}(D c + eta_v)``; with nu = 0 the block is inert."""
    arg = apply_difference(state.c) + state.eta_v
    if lambda_tv == 0 or state.nu == 0:
        state.v = arg
    else:
        state.v = soft_threshold(arg, lambda_tv / (state.mu * state.nu))
    return state.v


def update_nonneg_s(state: AdmmState) -> np.ndarray:
    state.s = np.maximum(0.0, state.c + state.eta_s)
    return state.s


def solve_compton_normal(rhs: np.ndarray, nu: float, x0=None, tol: float = 1e-8,
                         max_iter: int = 1000) -> np.ndarray:
    """Solve ``(2 I + nu D^T D) c = rhs`` by conjugate gradients."""
    if nu == 0:
        return rhs / 2.0
    shape = rhs.shape
    op = spla.LinearOperator((rhs.size, rhs.size), dtype=float,
                             matvec=lambda x: (2.0 * x.reshape(shape) + nu * laplacian(x.reshape(shape))).ravel())
    b = rhs.ravel()
    sol, info = spla.cg(op, b, x0=None if x0 is None else np.ravel(x0), rtol=tol, atol=0.0,
                        maxiter=max_iter)
    if info != 0:
        res = np.linalg.norm(op @ sol - b) / max(np.linalg.norm(b), 1e-300)
        raise AdmmError(f"theta CG did not converge: relative residual {res:.3e} after {max_iter} iterations")
    return sol.reshape(shape)


def update_theta(state: AdmmState, full: bool = True, tol: float = 1e-8, max_iter: int = 1000):
    """Least-squares fit of ``theta`` to ``z - eta`` in the Lambda-weighted norm.

    ``p = u - eta_u`` (when ``full``); ``c`` solves
    ``(2I + nu D^T D) c = (t - eta_t) + (s - eta_s) + nu D^T (v - eta_v)``.
    """
    rhs = (state.t - state.eta_t) + (state.s - state.eta_s)
    if state.nu > 0:
        rhs = rhs + state.nu * apply_difference_adjoint(state.v - state.eta_v)
    state.c = solve_compton_normal(rhs, state.nu, x0=state.c, tol=tol, max_iter=max_iter)
    if full:
        state.p = state.u - state.eta_u
    return state.c, state.p


def update_duals(state: AdmmState, blocks: str = "tuvs"):
    """Scaled dual step ``eta <- eta - (z - C theta)`` on the chosen blocks."""
    if "t" in blocks:
        state.eta_t = state.eta_t - (state.t - state.c)
    if "u" in blocks:
        state.eta_u = state.eta_u - (state.u - state.p)
    if "v" in blocks:
        state.eta_v = state.eta_v - (state.v - apply_difference(state.c))
    if "s" in blocks:
        state.eta_s = state.eta_s - (state.s - state.c)
    return state.eta_t, state.eta_u, state.eta_v, state.eta_s


def residuals(state: AdmmState, z_prev, cfg: AdmmConfig):
    """Primal and dual residuals with their stopping thresholds.

    Everything is measured in the balanced coordinates (each block multiplied
    by its Lambda entry), so Compton and photoelectric parts count equally.
    """
    lam = (1.0, state.u_scale, math.sqrt(state.nu), 1.0)
    z = state.z_blocks()
    cx = state.c_theta()
    r = math.sqrt(sum(l * l * float(np.sum((a - b) ** 2)) for l, a, b in zip(lam, z, cx)))
    dt, du, dv, ds = (a - b for a, b in zip(z, z_prev))
    dual_c = dt + ds + (state.nu * apply_difference_adjoint(dv) if state.nu > 0 else 0.0)
    d = state.mu * math.sqrt(float(np.sum(dual_c**2)) + state.u_scale**2 * float(np.sum(du**2)))

    n_z = sum(a.size for a in z)
    n_theta = state.c.size + state.p.size
    norm_z = math.sqrt(sum(l * l * float(np.sum(a**2)) for l, a in zip(lam, z)))
    norm_cx = math.sqrt(sum(l * l * float(np.sum(a**2)) for l, a in zip(lam, cx)))
    eta_c = state.eta_t + state.eta_s
    if state.nu > 0:
        eta_c = eta_c + state.nu * apply_difference_adjoint(state.eta_v)
    norm_y = state.mu * math.sqrt(float(np.sum(eta_c**2)) + state.u_scale**2 * float(np.sum(state.eta_u**2)))
    eps_pri = math.sqrt(n_z) * cfg.eps_abs + cfg.eps_rel * max(norm_z, norm_cx)
    eps_dual = math.sqrt(n_theta) * cfg.eps_abs + cfg.eps_rel * norm_y
    return r, d, eps_pri, eps_dual


# ----------------------------------------------------------------------------
# Levenberg-Marquardt block solver
# ----------------------------------------------------------------------------

def levenberg_marquardt(x0: np.ndarray, local_model, value, settings: LmSettings, nonneg: bool = False):
    """Damped Gauss-Newton steps on one image block.

    ``local_model(x)`` returns ``(f, grad, hess_matvec, hess_diag)``;
    ``value(x)`` evaluates ``f`` alone. Steps solve
    ``(H + damping * diag(H)) dx = -grad`` by Jacobi-preconditioned CG; a
    trial point is accepted only if it lowers ``f``. With ``nonneg`` the
    step is a projected one: entries sitting at zero with an outward
    gradient are frozen for the solve and the trial point is clipped at 0.
    Returns ``(x, ok)`` where ``ok`` is False if the start was not
    stationary and no step was ever accepted.
    """
    x = np.array(x0, dtype=float)
    if nonneg:
        x = np.maximum(x, 0.0)
    shape = x.shape
    damping = settings.damping
    accepted = False
    f, g, hv, hd = local_model(x)
    for _ in range(settings.max_steps):
        free = np.ones(x.size) if not nonneg else (~((x <= 0) & (g > 0))).ravel().astype(float)
        rhs = -g.ravel() * free
        if not np.isfinite(rhs).all():
            break
        # Stationary to rounding: the gradient is negligible next to H x.
        if np.linalg.norm(rhs) <= 1e-12 * np.linalg.norm(hv(x)):
            accepted = True
            break
        hd_flat = np.maximum(hd.ravel(), 1e-300)
        stepped = False
        for _r in range(settings.max_rejects):
            dscale = 1.0 + damping

            def matvec(y, damping=damping):
                return free * hv((free * y).reshape(shape)).ravel() + damping * hd_flat * y

            op = spla.LinearOperator((x.size, x.size), dtype=float, matvec=matvec)
            prec = spla.LinearOperator((x.size, x.size), dtype=float,
                                       matvec=lambda y, d=dscale: y / (d * hd_flat))
            dx, _info = spla.cg(op, rhs, rtol=settings.cg_tol, atol=0.0,
                                maxiter=settings.cg_max_iter, M=prec)
            trial = x + dx.reshape(shape)
            if nonneg:
                trial = np.maximum(trial, 0.0)
            ft = value(trial)
            if np.isfinite(ft) and ft < f:
                x = trial
                damping /= settings.factor
                stepped = accepted = True
                break
            damping *= settings.factor
        if not stepped:
            break
        f, g, hv, hd = local_model(x)
    return x, accepted


# ----------------------------------------------------------------------------
# CT subproblems
# ----------------------------------------------------------------------------

class CtProblem:
    """Data term, regularisers and the two nonlinear ADMM subproblems."""

    def __init__(self, A: SystemMatrix, sino: DualSinogram, spec_low: Spectrum, spec_high: Spectrum,
                 shape: tuple[int, int], cfg: AdmmConfig):
        if A.n_pixels != shape[0] * shape[1]:
            raise ValueError(f"image shape {shape} does not match {A.n_pixels} matrix columns")
        self.data = DataFidelity(A, sino, spec_low, spec_high)
        self.shape = shape
        self.cfg = cfg
        self._weights = None

    def nlm_weights(self, ref):
        if self.cfg.lambda_nlm == 0:
            return None
        if self._weights is None or not np.array_equal(self._weights.ref, ref):
            self._weights = NlmWeights(ref, self.cfg.nlm)
        return self._weights

    def _data(self, c, p):
        return self.data.linearize(np.ravel(c), np.ravel(p))

    def compton_model(self, state: AdmmState):
        """Local quadratic model of ``data(t, u) + mu/2 ||t - c - eta_t||^2``."""
        target = state.c + state.eta_t
        mu, shape = state.mu, self.shape

        def value(t):
            return self._data(t, state.u).value + 0.5 * mu * float(np.sum((t - target) ** 2))

        def local(t):
            lin = self._data(t, state.u)
            f = lin.value + 0.5 * mu * float(np.sum((t - target) ** 2))
            g = lin.gradient("c").reshape(shape) + mu * (t - target)
            hv = lambda x: lin.gauss_newton_matvec("c", x.ravel()).reshape(shape) + mu * x
            hd = lin.gauss_newton_diagonal("c").reshape(shape) + mu
            return f, g, hv, hd

        return local, value

    def photoelectric_model(self, state: AdmmState):
        """Local model of ``data(t, u) + lambda_nlm ||(I - W) u||^2 + (mu k^2/2) ||u - p - eta_u||^2``."""
        target = state.p + state.eta_u
        w = state.mu * state.u_scale**2
        lam = self.cfg.lambda_nlm
        W = self.nlm_weights(state.nlm_ref)
        shape = self.shape
        gram = W.gram_diagonal() if W is not None else 0.0

        def reg(u):
            if W is None:
                return 0.0, 0.0
            delta = W.residual(u)
            return lam * float(np.sum(delta**2)), 2.0 * lam * W.residual_adjoint(delta)

        def value(u):
            return self._data(state.t, u).value + reg(u)[0] + 0.5 * w * float(np.sum((u - target) ** 2))

        def local(u):
            lin = self._data(state.t, u)
            rv, rg = reg(u)
            f = lin.value + rv + 0.5 * w * float(np.sum((u - target) ** 2))
            g = lin.gradient("p").reshape(shape) + rg + w * (u - target)

            def hv(x):
                out = lin.gauss_newton_matvec("p", x.ravel()).reshape(shape) + w * x
                if W is not None:
                    out = out + 2.0 * lam * W.residual_adjoint(W.residual(x))
                return out

            hd = lin.gauss_newton_diagonal("p").reshape(shape) + w + 2.0 * lam * gram
            return f, g, hv, hd

        return local, value

    def objective_terms(self, c, p, ref):
        data = self._data(c, p).value
        tv = tv_penalty(c, self.cfg.lambda_tv) if self.cfg.lambda_tv else 0.0
        W = self.nlm_weights(ref)
        nlm = self.cfg.lambda_nlm * float(np.sum(W.residual(p) ** 2)) if W is not None else 0.0
        return data, tv, nlm

    def update_t(self, state: AdmmState):
        local, value = self.compton_model(state)
        t, ok = levenberg_marquardt(state.t, local, value, self.cfg.lm, nonneg=True)
        return t, ok

    def update_u(self, state: AdmmState):
        local, value = self.photoelectric_model(state)
        return levenberg_marquardt(state.u, local, value, self.cfg.lm)


def update_compton_t(state: AdmmState, problem) -> np.ndarray:
    """LM step on the t block; keeps the incoming t (and flags it) if no step helps."""
    t, ok = problem.update_t(state)
    if not ok:
        state.flags.append(("t", state.outer))
        log.warning("outer %d: t-update made no progress", state.outer)
    state.t = t
    return t


def update_photoelectric_u(state: AdmmState, problem) -> np.ndarray:
    u, ok = problem.update_u(state)
    if not ok:
        state.flags.append(("u", state.outer))
        log.warning("outer %d: u-update made no progress", state.outer)
    state.u = u
    return u


# ----------------------------------------------------------------------------
# Driver
# ----------------------------------------------------------------------------

REPORT_COLUMNS = ("iteration", "objective", "data", "tv", "nlm", "primal", "dual",
                  "eps_primal", "eps_dual", "seconds")


@dataclass
class SolveReport:
    rows: list = field(default_factory=list)
    converged: bool = False
    flags: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = REPORT_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
        return buf.getvalue()


def _check_finite(state: AdmmState):
    for name in ("c", "p", "t", "u", "v", "s"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise AdmmError(f"non-finite values in block {name} at outer iteration {state.outer}")


def admm_iterations(state: AdmmState, problem, cfg: AdmmConfig, callback=None) -> SolveReport:
    """Outer ADMM loop on a prepared state.

    Per outer iteration: t-update; ``inner_tv_iters`` rounds of
    (v, s, c) updates with v/s dual steps between rounds; u-update; full
    theta update; dual step on every block. ``problem`` supplies
    ``update_t``, ``update_u`` and ``objective_terms``.
    """
    report = SolveReport()
    start = time.perf_counter()
    for k in range(cfg.max_outer):
        state.outer = k
        z_prev = tuple(a.copy() for a in state.z_blocks())
        update_compton_t(state, problem)
        for j in range(cfg.inner_tv_iters):
            update_tv_v(state, cfg.lambda_tv)
            update_nonneg_s(state)
            update_theta(state, full=False, tol=cfg.theta_cg_tol, max_iter=cfg.theta_cg_max_iter)
            if j + 1 < cfg.inner_tv_iters:
                update_duals(state, "vs")
        update_photoelectric_u(state, problem)
        update_theta(state, full=True, tol=cfg.theta_cg_tol, max_iter=cfg.theta_cg_max_iter)
        update_duals(state, "tuvs")
        _check_finite(state)

        r, d, eps_p, eps_d = residuals(state, z_prev, cfg)
        data, tv, nlm = problem.objective_terms(state.c, state.p, state.nlm_ref)
        report.rows.append((k + 1, data + tv + nlm, data, tv, nlm, r, d, eps_p, eps_d,
                            time.perf_counter() - start))
        log.info("outer %d: objective %.6g primal %.3g/%.3g dual %.3g/%.3g",
                 k + 1, data + tv + nlm, r, eps_p, d, eps_d)
        if callback is not None:
            callback(state, report)
        # NLM weights for the next photoelectric update follow the latest Compton image.
        state.nlm_ref = state.c.copy()
        if r <= eps_p and d <= eps_d:
            report.converged = True
            break
    report.flags = list(state.flags)
    return report


def fbp_initial_guess(sino: DualSinogram, geom: ScanGeometry, grid, spec_low: Spectrum,
                      filt: Filter = Filter()) -> ImagePair:
    """Compton start from FBP of the low-energy log data over the mean f_KN; p = 0."""
    m = np.where(sino.valid, sino.m_low, 0.0)
    c = fbp(m, geom, grid, filt) / effective_attenuation_scale(spec_low)
    return ImagePair(grid, np.maximum(c, 0.0), np.zeros(grid.shape))


def run_admm(sino: DualSinogram, A: SystemMatrix, spec_low: Spectrum, spec_high: Spectrum,
             cfg: AdmmConfig, init: ImagePair, callback=None):
    """Reconstruct ``(c, p)`` from a dual-energy sinogram.

    ``init`` provides the starting images (see :func:`fbp_initial_guess`);
    the first NLM reference is ``init.c``. Returns ``(ImagePair, SolveReport)``.
    """
    grid = init.grid
    if sino.n_rays != A.n_rays:
        raise ValueError(f"sinogram has {sino.n_rays} rays, matrix expects {A.n_rays}")
    problem = CtProblem(A, sino, spec_low, spec_high, grid.shape, cfg)
    state = AdmmState.initial(init.c, init.p, cfg)
    report = admm_iterations(state, problem, cfg, callback)
    return ImagePair(grid, state.c, state.p), report
