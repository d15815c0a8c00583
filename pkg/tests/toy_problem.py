"""Separable quadratic problems with closed-form ADMM block updates."""

import numpy as np

from dect.admm import AdmmConfig, AdmmState, admm_iterations
from dect.regularizers import tv_penalty


class QuadraticToy:
    """Data term 0.5 ||t - a||^2 + 0.5 kappa ||u - b||^2 (no NLM term)."""

    def __init__(self, a, b, kappa=1.0, lambda_tv=0.0):
        self.a = np.atleast_2d(np.asarray(a, float))
        self.b = np.atleast_2d(np.asarray(b, float))
        self.kappa = kappa
        self.lambda_tv = lambda_tv

    def update_t(self, state):
        mu = state.mu
        t = (self.a + mu * (state.c + state.eta_t)) / (1 + mu)
        return np.maximum(t, 0.0), True

    def update_u(self, state):
        w = state.mu * state.u_scale**2
        return (self.kappa * self.b + w * (state.p + state.eta_u)) / (self.kappa + w), True

    def objective_terms(self, c, p, ref):
        data = 0.5 * np.sum((c - self.a) ** 2) + 0.5 * self.kappa * np.sum((p - self.b) ** 2)
        return float(data), tv_penalty(c, self.lambda_tv), 0.0


def solve_toy(toy, mu=1.0, nu=1.0, max_outer=200, inner=50, x0=None):
    cfg = AdmmConfig(penalty_mu=mu, nu=nu, u_scale=1.0, lambda_tv=toy.lambda_tv, lambda_nlm=0.0,
                     max_outer=max_outer, inner_tv_iters=inner, eps_abs=0.0, eps_rel=0.0,
                     theta_cg_tol=1e-14)
    c0 = np.zeros_like(toy.a) if x0 is None else x0[0]
    p0 = np.zeros_like(toy.b) if x0 is None else x0[1]
    state = AdmmState.initial(c0, p0, cfg)
    report = admm_iterations(state, toy, cfg)
    return state, report
