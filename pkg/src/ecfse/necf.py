"""Nonlinear equivalent-circuit estimator with bounded admittances.

Solved by a primal-dual log-barrier method: each iteration takes a Newton
step on the barrier KKT conditions (in augmented form, so the weighted
objective Hessian is never formed), keeps bounded variables strictly
inside their box with a fraction-to-boundary rule and shrinks the barrier
parameter once the barrier subproblem is solved well enough.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .kkt import KktSystem, SingularSystemError, solve_sparse_symmetric
from .models import NONLINEAR, build_estimation_model
from .result import EstimatedState, EstimationError, UnobservableError

__all__ = ["NecfOptions", "NecfProblem", "estimate_necf", "solve_necf_model"]


@dataclass(frozen=True)
class NecfOptions:
    tol: float = 1e-8
    max_iter: int = 200
    mu_init: float = 1e-3
    mu_min: float = 1e-12
    mu_factor: float = 0.1
    mu_power: float = 1.5
    barrier_slack: float = 10.0
    boundary_fraction: float = 0.995
    fixed_tol: float = 1e-12

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")
        if not 0 < self.mu_factor < 1 or not 0 < self.boundary_fraction < 1:
            raise ValueError("mu_factor and boundary_fraction must lie in (0, 1)")


class NecfProblem:
    """``min sum w (C x - d)^2  s.t.  circuit(x) = 0,  lo <= x[B] <= hi``.

    Weights are divided by a common scale (geometric mean of the extreme
    weights); variables whose interval is empty up to ``fixed_tol`` become
    equality rows.
    """

    def __init__(self, model, fixed_tol=1e-12):
        if model.mode != NONLINEAR:
            raise ValueError("NECF needs a model assembled in nonlinear mode")
        self.model = model
        self.system = model.system
        c, d, w = model.objective_matrices()
        self.c, self.d, self.w_raw = c.tocsr(), d, w
        self.scale = float(np.sqrt(w.max() * w.min())) if len(w) else 1.0
        self.w = w / self.scale
        idx, lo, hi = model.bound_arrays()
        if np.any(lo > hi):
            raise EstimationError("infeasible bounds")
        width = hi - lo
        fixed = width <= fixed_tol * np.maximum(1.0, np.abs(lo))
        self.fixed_idx, self.fixed_val = idx[fixed], 0.5 * (lo[fixed] + hi[fixed])
        self.idx, self.lo, self.hi = idx[~fixed], lo[~fixed], hi[~fixed]
        n = self.system.shape[1]
        self.n = n
        self.m_circuit = self.system.shape[0]
        self.fixed_rows = sp.csr_matrix(
            (np.ones(len(self.fixed_idx)), (np.arange(len(self.fixed_idx)), self.fixed_idx)),
            shape=(len(self.fixed_idx), n))

    def objective(self, x):
        """Objective in original (unscaled) weights."""
        r = self.c @ x - self.d
        return float(np.sum(self.w_raw * r * r))

    def gradient(self, x):
        return 2.0 * (self.c.T @ (self.w * (self.c @ x - self.d)))

    def constraints(self, x):
        return np.r_[self.system.residual(x), x[self.fixed_idx] - self.fixed_val]

    def jacobian(self, x):
        return sp.vstack([self.system.jacobian(x), self.fixed_rows], format="csr")

    def constraint_hessian(self, lam):
        return self.system.constraint_hessian(lam[:self.m_circuit])

    def start(self):
        x = self.model.initial_point()
        x[self.fixed_idx] = self.fixed_val
        mid = 0.5 * (self.lo + self.hi)
        x[self.idx] = mid
        return x


def _max_step(v, dv, fraction):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-fraction * v[neg] / dv[neg])))


def _kkt_errors(prob, x, lam, zl, zu, mu):
    """Scaled stationarity, feasibility and complementarity errors.

    Stationarity is relative to the objective gradient (once that exceeds
    one), since its terms cancel and leave a roundoff floor proportional
    to their size.
    """
    idx = prob.idx
    sl, su = x[idx] - prob.lo, prob.hi - x[idx]
    grad = prob.gradient(x)
    rd = grad + prob.jacobian(x).T @ lam
    rd[idx] += zu - zl
    n_mult = max(1, len(lam) + 2 * len(idx))
    scale = max(1.0, (np.sum(np.abs(lam)) + np.sum(zl) + np.sum(zu)) / (100.0 * n_mult),
                float(np.max(np.abs(grad), initial=0.0)))
    comp = np.r_[sl * zl - mu, su * zu - mu]
    return (float(np.max(np.abs(rd), initial=0.0)) / scale,
            float(np.max(np.abs(prob.constraints(x)), initial=0.0)),
            float(np.max(np.abs(comp), initial=0.0)))


def _newton_solve(prob, x, lam, sigma, g, extra_rows=None, extra_res=None):
    """Augmented Newton system of the (barrier) Lagrangian.

    Returns the primal step and the new multipliers of all equality rows.
    """
    c_mat = prob.c
    m, n = c_mat.shape
    jac = prob.jacobian(x)
    res = prob.constraints(x)
    if extra_rows is not None:
        jac = sp.vstack([jac, extra_rows], format="csr")
        res = np.r_[res, extra_res]
    h = prob.constraint_hessian(lam) + sp.diags(sigma)
    k = sp.bmat([[sp.diags(0.5 / prob.w), -c_mat, None], [-c_mat.T, -h, -jac.T], [None, -jac, None]],
                format="csc")
    rhs = np.r_[np.zeros(m), g, res]
    sol = solve_sparse_symmetric(KktSystem(k, rhs, m + n, jac.shape[0]))
    return sol[m:m + n], sol[m + n:]


def _crossover(prob, x, lam, zl, zu, max_steps=5):
    """Remove the barrier bias: guess the active bounds (multiplier larger
    than slack), hold them fixed and take plain Newton steps on the
    remaining equality-constrained problem.

    Returns ``(x, lam, zl, zu)`` or ``None`` when the guess is refuted
    (a free variable leaves its box or a bound multiplier has the wrong
    sign).
    """
    idx = prob.idx
    sl, su = x[idx] - prob.lo, prob.hi - x[idx]
    at_lo, at_hi = zl > sl, zu > su
    act = np.flatnonzero(at_lo | at_hi)
    bound = np.where(at_lo[act], prob.lo[act], prob.hi[act])
    rows = sp.csr_matrix((np.ones(len(act)), (np.arange(len(act)), idx[act])), shape=(len(act), prob.n))
    x = x.copy()
    x[idx[act]] = bound
    lam_all = np.r_[lam, zu[act] - zl[act]]
    sigma = np.zeros(prob.n)
    for _ in range(max_steps):
        dx, lam_all = _newton_solve(prob, x, lam_all[:len(lam)], sigma, prob.gradient(x),
                                    rows, x[idx[act]] - bound)
        x = x + dx
        x[idx[act]] = bound
        if np.max(np.abs(dx)) <= 1e-14 * max(1.0, np.max(np.abs(x))):
            break
    inner = np.ones(len(idx), dtype=bool)
    inner[act] = False
    if np.any(x[idx[inner]] < prob.lo[inner]) or np.any(x[idx[inner]] > prob.hi[inner]):
        return None
    mult = lam_all[len(lam):]
    zl, zu = np.zeros(len(idx)), np.zeros(len(idx))
    lo_act, hi_act = at_lo[act], ~at_lo[act]
    if np.any(mult[lo_act] > 0) or np.any(mult[hi_act] < 0):
        return None
    zl[act[lo_act]] = -mult[lo_act]
    zu[act[hi_act]] = mult[hi_act]
    return x, lam_all[:len(lam)], zl, zu


def solve_necf_model(model, options=None):
    """Run the barrier method; returns ``(x, info)``."""
    opt = options or NecfOptions()
    prob = NecfProblem(model, opt.fixed_tol)
    n, idx = prob.n, prob.idx
    x = prob.start()
    lam = np.zeros(prob.m_circuit + len(prob.fixed_idx))
    mu = opt.mu_init
    sl, su = x[idx] - prob.lo, prob.hi - x[idx]
    zl, zu = mu / sl, mu / su

    best = (np.inf, x.copy(), lam, zl, zu)
    it = 0
    converged = False
    err = _kkt_errors(prob, x, lam, zl, zu, 0.0)
    while it < opt.max_iter:
        e0 = max(err)
        if e0 < best[0]:
            best = (e0, x.copy(), lam.copy(), zl.copy(), zu.copy())
        if e0 < opt.tol:
            converged = True
            break
        # barrier parameter update
        while mu > opt.mu_min and max(_kkt_errors(prob, x, lam, zl, zu, mu)) <= opt.barrier_slack * mu:
            mu = max(opt.mu_min, min(opt.mu_factor * mu, mu ** opt.mu_power))
        sl, su = x[idx] - prob.lo, prob.hi - x[idx]
        sigma = np.zeros(n)
        sigma[idx] = zl / sl + zu / su
        g = prob.gradient(x)
        g[idx] += -mu / sl + mu / su
        try:
            dx, lam_new = _newton_solve(prob, x, lam, sigma, g)
        except SingularSystemError as exc:
            raise UnobservableError(f"singular Newton system at iteration {it}: {exc}") from exc
        dlam = lam_new - lam
        dzl = mu / sl - zl - (zl / sl) * dx[idx]
        dzu = mu / su - zu + (zu / su) * dx[idx]
        ap = min(_max_step(sl, dx[idx], opt.boundary_fraction), _max_step(su, -dx[idx], opt.boundary_fraction))
        ad = min(_max_step(zl, dzl, opt.boundary_fraction), _max_step(zu, dzu, opt.boundary_fraction))
        x = x + ap * dx
        lam = lam + ap * dlam
        zl, zu = zl + ad * dzl, zu + ad * dzu
        it += 1
        err = _kkt_errors(prob, x, lam, zl, zu, 0.0)

    if not converged:
        if max(err) < best[0]:
            best = (max(err), x.copy(), lam.copy(), zl.copy(), zu.copy())
        _, x, lam, zl, zu = best
        err = _kkt_errors(prob, x, lam, zl, zu, 0.0)

    polished = False
    try:
        cross = _crossover(prob, x, lam, zl, zu)
    except SingularSystemError:
        cross = None
    if cross is not None:
        err_c = _kkt_errors(prob, *cross, 0.0)
        if max(err_c) <= max(max(err), opt.tol):
            x, lam, zl, zu = cross
            err, polished = err_c, True
            converged = converged or max(err) < opt.tol

    info = {
        "iterations": it,
        "converged": converged,
        "polished": polished,
        "kkt_error": float(max(err)),
        "stationarity": err[0], "feasibility": err[1], "complementarity": err[2],
        "mu": mu, "multipliers": lam, "z_lower": zl, "z_upper": zu, "problem": prob,
    }
    return x, info


def estimate_necf(case, measurements, options=None, model_options=None, model=None):
    """Estimate the state with the bounded nonlinear circuit formulation.

    If the iteration limit is hit the best iterate is returned with
    ``converged=False`` and its KKT error in ``residual``.
    """
    t0 = time.perf_counter()
    if model is None:
        model = build_estimation_model(case, measurements, NONLINEAR, model_options)
    x, info = solve_necf_model(model, options)
    vr, vi = model.state(x)
    names = model.system.var_map
    aux = {k: x[j] for k, j in names.items() if not k.startswith("V(")}
    return EstimatedState(
        method="necf", v_real=vr, v_imag=vi, objective=info["problem"].objective(x),
        iterations=info["iterations"], wall_time=time.perf_counter() - t0,
        converged=info["converged"], residual=info["kkt_error"], aux=aux,
    )
