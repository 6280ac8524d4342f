"""Sparse symmetric (indefinite) KKT systems and their direct solution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = ["KktSystem", "SolveReport", "SingularSystemError", "solve_sparse_symmetric",
           "equality_constrained_lsq"]


class SingularSystemError(RuntimeError):
    """Raised when the factorization meets a (numerically) zero pivot."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class SolveReport:
    relative_residual: float
    pivot_ratio: float
    refinements: int


@dataclass
class KktSystem:
    """``[[H, A^T], [A, 0]] [x; lam] = [g; b]``."""

    matrix: sp.csc_matrix
    rhs: np.ndarray
    n_primal: int
    n_dual: int
    report: SolveReport | None = field(default=None)

    @classmethod
    def from_blocks(cls, hessian, constraints, grad_rhs, con_rhs):
        n = hessian.shape[0]
        m = constraints.shape[0]
        k = sp.bmat([[hessian, constraints.T], [constraints, None]], format="csc")
        return cls(k, np.r_[grad_rhs, con_rhs], n, m)

    @property
    def shape(self):
        return self.matrix.shape

    def split(self, sol):
        return sol[:self.n_primal], sol[self.n_primal:]


def _equilibrate(matrix, sweeps=8):
    """Symmetric Ruiz scaling; returns ``d`` with ``D K D`` balanced."""
    k = sp.csr_matrix(matrix)
    k.sum_duplicates()
    rows = np.repeat(np.arange(k.shape[0]), np.diff(k.indptr))
    vals = np.abs(k.data)
    nonempty = np.diff(k.indptr) > 0
    starts = k.indptr[:-1][nonempty]
    d = np.ones(k.shape[0])
    for _ in range(sweeps):
        scaled = vals * d[rows] * d[k.indices]
        row_max = np.ones(k.shape[0])
        if len(starts):
            row_max[nonempty] = np.maximum.reduceat(scaled, starts)
        row_max[row_max == 0] = 1.0
        d /= np.sqrt(row_max)
    return d


def _singular_index(ks):
    # exact singularity gives no pivot position; a tiny diagonal shift
    # makes the factorization succeed and exposes the offending unknown
    shift = 1e-14 * max(abs(ks).max(), 1.0)
    try:
        lu = splu((ks + shift * sp.identity(ks.shape[0])).tocsc(), permc_spec="COLAMD", diag_pivot_thresh=0.1)
    except RuntimeError:
        return None
    return int(lu.perm_c[np.argmin(np.abs(lu.U.diagonal()))])


def solve_sparse_symmetric(system, tol=1e-10, max_refine=5, pivot_tol=1e-13):
    """Solve a sparse symmetric system by scaled sparse LU.

    Uses symmetric equilibration, a COLAMD fill-reducing ordering and a
    few steps of iterative refinement. The relative residual
    ``||Kx - r||_inf / ||r||_inf`` is stored on ``system.report``.
    """
    k = system.matrix.tocsc()
    rhs = np.asarray(system.rhs, dtype=float)
    if k.shape[0] != k.shape[1] or k.shape[0] != rhs.shape[0]:
        raise ValueError(f"shape mismatch: matrix {k.shape}, rhs {rhs.shape}")
    d = _equilibrate(k)
    ks = (sp.diags(d) @ k @ sp.diags(d)).tocsc()
    try:
        lu = splu(ks, permc_spec="COLAMD", diag_pivot_thresh=0.1)
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}", index=_singular_index(ks)) from exc
    udiag = np.abs(lu.U.diagonal())
    ratio = float(udiag.min() / udiag.max()) if udiag.size else 1.0
    if ratio < pivot_tol:
        col = int(lu.perm_c[np.argmin(udiag)])
        raise SingularSystemError(f"numerically singular system near unknown {col} "
                                  f"(pivot ratio {ratio:.2e})", index=col)
    bs = d * rhs
    scale = max(np.linalg.norm(rhs, np.inf), np.finfo(float).tiny)

    def rel_residual(y):
        return np.linalg.norm(k @ (d * y) - rhs, np.inf) / scale

    y = lu.solve(bs)
    rel = rel_residual(y)
    steps = 0
    while rel >= 1e-2 * tol and steps < max_refine:
        trial = y + lu.solve(bs - ks @ y)
        new = rel_residual(trial)
        steps += 1
        if new >= rel:
            break
        y, rel = trial, new
    x = d * y
    system.report = SolveReport(float(rel), ratio, steps)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution has non-finite entries")
    return x


def equality_constrained_lsq(c, d, w, a, b, **kw):
    """``min sum w (c x - d)^2  s.t.  a x = b`` through one KKT solve.

    Uses the augmented form in the scaled residual multipliers
    ``mu = w (d - c x) / s`` with ``s`` the geometric mean of the extreme
    weights::

        [ diag(s/w)       c    0  ] [mu ]   [d]
        [ c^T             0   a^T ] [x  ] = [0]
        [ 0               a    0  ] [lam]   [b]

    which avoids forming ``c^T W c`` and keeps the system well scaled when
    weights span many orders of magnitude. Returns ``(x, lam, system)``;
    ``lam`` are the constraint multipliers of the objective scaled by
    ``1/(2 s)``.
    """
    c = sp.csr_matrix(c)
    a = sp.csr_matrix(a)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    m, n = c.shape
    wn = w / np.sqrt(w.max() * w.min())
    k = sp.bmat([[sp.diags(1.0 / wn), c, None], [c.T, None, a.T], [None, a, None]], format="csc")
    system = KktSystem(k, np.r_[d, np.zeros(n), b], m + n, a.shape[0])
    sol = solve_sparse_symmetric(system, **kw)
    return sol[m:m + n], sol[m + n:], system
