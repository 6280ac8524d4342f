import numpy as np
import pytest
import scipy.sparse as sp

from ecfse.kkt import KktSystem, SingularSystemError, equality_constrained_lsq, solve_sparse_symmetric
from ecfse.measurements import load_placement
from ecfse.models import build_estimation_model

from conftest import noisy_set
from oracles import dense_constrained_lsq


def test_identity_system():
    b = np.arange(1.0, 6.0)
    system = KktSystem(sp.identity(5, format="csc"), b, 5, 0)
    assert np.array_equal(solve_sparse_symmetric(system), b)
    assert system.report.relative_residual == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_bordered_spd_matches_dense(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(50, 50))
    h = m @ m.T + 0.1 * np.eye(50)
    a = rng.normal(size=(12, 50))
    system = KktSystem.from_blocks(sp.csc_matrix(h), sp.csr_matrix(a), rng.normal(size=50), rng.normal(size=12))
    x = solve_sparse_symmetric(system)
    dense = np.linalg.solve(system.matrix.toarray(), system.rhs)
    assert np.max(np.abs(x - dense)) < 1e-10 * max(1.0, np.max(np.abs(dense)))
    assert system.report.relative_residual < 1e-10
    primal, dual = system.split(x)
    assert primal.shape == (50,) and dual.shape == (12,)


def test_constrained_lsq_with_spread_weights():
    rng = np.random.default_rng(3)
    c = rng.normal(size=(30, 12))
    d = rng.normal(size=30)
    w = 10.0 ** rng.uniform(-4, 8, size=30)
    a = rng.normal(size=(4, 12))
    b = rng.normal(size=4)
    x, _, _ = equality_constrained_lsq(c, d, w, a, b)
    ref = dense_constrained_lsq(c, d, w, a, b)
    assert np.max(np.abs(x - ref)) < 1e-8 * max(1.0, np.max(np.abs(ref)))
    with pytest.raises(ValueError):
        equality_constrained_lsq(c, d, -w, a, b)


def test_ieee118_kkt_residual(ieee118, truth118):
    ms = noisy_set(ieee118, truth118, load_placement("ieee118"), seed=0)
    model = build_estimation_model(ieee118, ms)
    c, d, w = model.objective_matrices()
    _, _, system = equality_constrained_lsq(c, d, w, model.system.matrix, model.system.rhs)
    assert system.report.relative_residual < 1e-10
    n_c, n_x = c.shape
    assert system.shape[0] == n_c + n_x + model.system.shape[0]
    assert abs(system.matrix - system.matrix.T).max() == 0


def test_singular_pivot_carries_index():
    k = sp.csc_matrix(np.array([[1.0, 1.0, 0.0], [1.0, 1.0 + 1e-16, 0.0], [0.0, 0.0, 2.0]]))
    with pytest.raises(SingularSystemError) as info:
        solve_sparse_symmetric(KktSystem(k, np.ones(3), 3, 0))
    assert info.value.index in (0, 1)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve_sparse_symmetric(KktSystem(sp.identity(3, format="csc"), np.ones(4), 3, 0))
