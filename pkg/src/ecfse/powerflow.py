"""Newton-Raphson power flow used to generate true system states."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import BusKind

__all__ = ["TrueState", "PowerFlowError", "solve_power_flow", "flows_from_state",
           "true_state_to_json", "true_state_from_json"]


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrueState:
    """Solved operating point.

    ``branch_flows`` is an ``(n_branch, 2)`` complex array of power flowing
    from each end into the branch (column 0 = from end). ``injections`` is
    the net complex power injected into the network at each bus
    (generation minus load).
    """

    v_real: np.ndarray
    v_imag: np.ndarray
    branch_flows: np.ndarray
    injections: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0

    @property
    def voltage(self):
        return self.v_real + 1j * self.v_imag


def flows_from_state(case, v_real, v_imag):
    v = np.asarray(v_real, dtype=float) + 1j * np.asarray(v_imag, dtype=float)
    if v.shape != (case.n_bus,):
        raise ValueError(f"expected {case.n_bus} voltages, got {v.shape}")
    ybus, yf, yt = case.admittance_matrices()
    f, t, _ = case.branch_arrays()
    s_from = v[f] * np.conj(yf @ v)
    s_to = v[t] * np.conj(yt @ v)
    injections = v * np.conj(ybus @ v)
    return np.column_stack([s_from, s_to]), injections


def _jacobian(ybus, v):
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(ibus)
    diag_vn = sp.diags(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
    return ds_dva, ds_dvm


def solve_power_flow(case, tol=1e-10, max_iter=30):
    """Solve the polar power-mismatch equations from a flat start.

    PV buses hold |V| at the generator set point; reactive limits are not
    enforced.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not case.is_connected():
        raise PowerFlowError("network is not connected")
    ybus, _, _ = case.admittance_matrices()
    ybus = ybus.tocsc()
    n = case.n_bus
    kinds = [b.kind for b in case.buses]
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    pvpq = np.r_[pv, pq]
    s_spec = np.array([complex(b.p_gen - b.p_load, b.q_gen - b.q_load) for b in case.buses])

    vm = np.ones(n)
    va = np.zeros(n)
    for i, b in enumerate(case.buses):
        if b.kind is not BusKind.PQ:
            vm[i] = b.v_set
    v = vm * np.exp(1j * va)

    def mismatch(v):
        ds = v * np.conj(ybus @ v) - s_spec
        return np.r_[ds.real[pvpq], ds.imag[pq]]

    f = mismatch(v)
    norm = np.linalg.norm(f, np.inf)
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise PowerFlowError(f"no convergence after {max_iter} iterations (mismatch {norm:.3e})")
        ds_dva, ds_dvm = _jacobian(ybus, v)
        j = sp.vstack([
            sp.hstack([ds_dva.real[pvpq][:, pvpq], ds_dvm.real[pvpq][:, pq]]),
            sp.hstack([ds_dva.imag[pq][:, pvpq], ds_dvm.imag[pq][:, pq]]),
        ]).tocsc()
        try:
            dx = -splu(j).solve(f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular Jacobian: {exc}") from exc
        npv = len(pvpq)
        va[pvpq] += dx[:npv]
        vm[pq] += dx[npv:]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = np.linalg.norm(f, np.inf)
        it += 1

    flows, inj = flows_from_state(case, v.real, v.imag)
    return TrueState(v_real=v.real.copy(), v_imag=v.imag.copy(), branch_flows=flows,
                     injections=inj, iterations=it, mismatch=float(norm))


def _cpx(a):
    a = np.asarray(a)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def true_state_to_json(state):
    return json.dumps({
        "format": "ecfse-truth/1",
        "v_real": state.v_real.tolist(),
        "v_imag": state.v_imag.tolist(),
        "branch_flows": _cpx(state.branch_flows),
        "injections": _cpx(state.injections),
        "iterations": state.iterations,
        "mismatch": state.mismatch,
    }, indent=1)


def true_state_from_json(text):
    doc = json.loads(text)
    if doc.get("format") != "ecfse-truth/1":
        raise ValueError(f"unsupported truth format {doc.get('format')!r}")

    def cpx(d):
        return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)

    return TrueState(
        v_real=np.asarray(doc["v_real"], dtype=float),
        v_imag=np.asarray(doc["v_imag"], dtype=float),
        branch_flows=cpx(doc["branch_flows"]).reshape(-1, 2),
        injections=cpx(doc["injections"]),
        iterations=doc.get("iterations", 0),
        mismatch=doc.get("mismatch", 0.0),
    )
