"""Linear equivalent-circuit estimator: one sparse KKT solve."""

from __future__ import annotations

import time

import numpy as np

from .kkt import SingularSystemError, equality_constrained_lsq
from .models import LINEAR, build_estimation_model
from .result import EstimatedState, UnobservableError

__all__ = ["estimate_lecf", "solve_lecf_model"]


def solve_lecf_model(model):
    """Minimize the weighted objective subject to the circuit equations.

    Returns ``(x, multipliers, kkt_system)``.
    """
    if model.mode != LINEAR:
        raise ValueError("LECF needs a model assembled in linear mode")
    c, d, w = model.objective_matrices()
    try:
        return equality_constrained_lsq(c, d, w, model.system.matrix, model.system.rhs)
    except SingularSystemError as exc:
        raise UnobservableError(f"KKT system is singular; measurement set is likely unobservable ({exc})") from exc


def estimate_lecf(case, measurements, options=None, model=None):
    """Estimate the state with the linear circuit formulation.

    ``model`` may be a prebuilt linear :class:`~ecfse.models.EstimationModel`
    for the same measurement set.
    """
    t0 = time.perf_counter()
    if model is None:
        model = build_estimation_model(case, measurements, LINEAR, options)
    x, lam, kkt = solve_lecf_model(model)
    vr, vi = model.state(x)
    elapsed = time.perf_counter() - t0
    names = model.system.var_map
    aux = {k: x[j] for k, j in names.items() if not k.startswith("V(")}
    return EstimatedState(
        method="lecf", v_real=vr, v_imag=vi, objective=model.objective(x), iterations=1,
        wall_time=elapsed, converged=True, residual=kkt.report.relative_residual, aux=aux,
    )
