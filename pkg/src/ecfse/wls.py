"""Hybrid weighted-least-squares baseline in polar coordinates."""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .metrics import MeasurementFunctions
from .result import EstimatedState, EstimationError, UnobservableError

__all__ = ["estimate_wls"]


def estimate_wls(case, measurements, tol=1e-8, max_iter=30, null_variance=1e-10, functions=None):
    """Gauss-Newton WLS on bus angles and magnitudes.

    Null-injection buses contribute virtual zero-injection measurements of
    variance ``null_variance``. With a PMU at the slack bus its angle is
    held at the measured value; with no PMU at all it is held at zero;
    otherwise all angles are estimated.
    """
    t0 = time.perf_counter()
    mf = functions or MeasurementFunctions(case, measurements, virtual_null=null_variance)
    z, var = mf.rect_measured()
    w = 1.0 / var
    n = case.n_bus
    slack = case.slack_index
    slack_pmu = measurements.pmu_at(case.buses[slack].id)
    if slack_pmu is not None:
        pinned, theta0 = True, slack_pmu.voltage.angle
    elif not measurements.pmus:
        pinned, theta0 = True, 0.0
    else:
        pinned, theta0 = False, 0.0
    cols = np.r_[np.delete(np.arange(n), slack) if pinned else np.arange(n), n + np.arange(n)]
    if len(z) < len(cols):
        raise UnobservableError(f"{len(z)} measurements for {len(cols)} states")

    va = np.full(n, theta0)
    vm = np.ones(n)
    wd = sp.diags(w)
    converged = False
    it = 0
    step = np.inf
    while it < max_iter:
        v = vm * np.exp(1j * va)
        r = z - mf.rect(v)
        h = mf.rect_jacobian(v)[:, cols].tocsc()
        gain = (h.T @ wd @ h).tocsc()
        try:
            dx = splu(gain).solve(h.T @ (w * r))
        except RuntimeError as exc:
            raise UnobservableError(f"singular gain matrix: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise UnobservableError("singular gain matrix")
        full = np.zeros(2 * n)
        full[cols] = dx
        va += full[:n]
        vm += full[n:]
        it += 1
        step = float(np.max(np.abs(dx)))
        if step < tol:
            converged = True
            break
    if not converged:
        raise EstimationError(f"WLS did not converge in {max_iter} iterations (last step {step:.2e})")
    v = vm * np.exp(1j * va)
    r = z - mf.rect(v)
    return EstimatedState(
        method="wls", v_real=v.real.copy(), v_imag=v.imag.copy(), objective=float(np.sum(w * r * r)),
        iterations=it, wall_time=time.perf_counter() - t0, converged=True, residual=step,
    )
