from dataclasses import replace

import numpy as np
import pytest

from ecfse.measurements import load_placement, synthesize_measurements
from ecfse.models import NONLINEAR, build_estimation_model
from ecfse.necf import NecfOptions, estimate_necf, solve_necf_model
from ecfse.result import EstimationError

from conftest import case3_plan, max_abs, noisy_set
from oracles import ReducedAdmittanceProblem, projected_gradient_descent


@pytest.fixture(scope="module")
def oracle_runs(case3, truth3):
    runs = []
    for seed in range(3):
        ms = noisy_set(case3, truth3, case3_plan(case3), seed=seed)
        model = build_estimation_model(case3, ms, NONLINEAR)
        problem = ReducedAdmittanceProblem(model)
        y, value = projected_gradient_descent(problem)
        runs.append((model, problem, y, value))
    return runs


def test_objective_matches_projected_gradient_oracle(oracle_runs):
    for model, problem, y_ref, f_ref in oracle_runs:
        x, info = solve_necf_model(model)
        assert info["converged"]
        assert info["kkt_error"] < 1e-6
        f = info["problem"].objective(x)
        assert abs(f - f_ref) < 1e-6 * max(1.0, f_ref)
        # and the admittances agree with the oracle's
        assert max_abs(x[problem.y_idx], y_ref) < 1e-4


def test_complementarity_at_convergence(oracle_runs):
    for model, _, _, _ in oracle_runs:
        x, info = solve_necf_model(model)
        prob = info["problem"]
        sl, su = x[prob.idx] - prob.lo, prob.hi - x[prob.idx]
        assert np.all(sl >= -1e-12) and np.all(su >= -1e-12)
        assert np.max(np.abs(info["z_lower"] * sl), initial=0.0) < 1e-6
        assert np.max(np.abs(info["z_upper"] * su), initial=0.0) < 1e-6
        assert info["complementarity"] < 1e-6


def test_zero_noise_admittances_and_state(ieee14, truth14, exact):
    ms = synthesize_measurements(ieee14, truth14, load_placement("ieee14"), exact, 0)
    model = build_estimation_model(ieee14, ms, NONLINEAR)
    x, info = solve_necf_model(model)
    assert info["converged"]
    vr, vi = model.state(x)
    assert max_abs(vr + 1j * vi, truth14.voltage) < 1e-7
    vm = model.system.var_map
    for t in model.terms:
        if t.kind == "admittance":
            _, bus, which, gb = t.source
            i = ieee14.bus_index(bus)
            if which == "inj":
                s = -truth14.injections[i]
            else:
                col = 0 if ieee14.branch_end(which, bus) == "from" else 1
                s = -truth14.branch_flows[which, col]
            true = (s.real if gb == "G" else s.imag) / abs(truth14.voltage[i]) ** 2
            assert x[vm[t.coeffs[0][0]]] == pytest.approx(true, abs=1e-7)


def test_collapsed_bounds_reduce_to_linear_solve(case3, truth3, exact):
    ms = synthesize_measurements(case3, truth3, case3_plan(case3), exact, 0)
    model = build_estimation_model(case3, ms, NONLINEAR)
    targets = {t.coeffs[0][0]: t.target for t in model.terms if t.kind == "admittance"}
    pinned = replace(model, bounds=[(v, targets[v], targets[v]) for v, _, _ in model.bounds])
    x, info = solve_necf_model(pinned)
    assert info["converged"] and info["iterations"] <= 2
    vr, vi = pinned.state(x)
    assert max_abs(vr + 1j * vi, truth3.voltage) < 1e-9


def test_infeasible_bounds(case3, truth3):
    model = build_estimation_model(case3, noisy_set(case3, truth3, case3_plan(case3)), NONLINEAR)
    bad = replace(model, bounds=[(v, hi + 1.0, hi) for v, _, hi in model.bounds])
    with pytest.raises(EstimationError, match="infeasible"):
        solve_necf_model(bad)


def test_iteration_limit_returns_best_iterate(ieee14, truth14):
    ms = noisy_set(ieee14, truth14, load_placement("ieee14"), seed=1)
    est = estimate_necf(ieee14, ms, options=NecfOptions(max_iter=2))
    assert not est.converged
    assert np.isfinite(est.residual) and est.residual > 0
    assert est.iterations == 2
    full = estimate_necf(ieee14, ms)
    assert full.converged and full.residual < 1e-8
    assert full.residual < est.residual


def test_ieee118_converges(ieee118, truth118):
    for seed in range(2):
        est = estimate_necf(ieee118, noisy_set(ieee118, truth118, load_placement("ieee118"), seed=seed))
        assert est.converged and est.iterations < 40


def test_deterministic(case3, truth3):
    ms = noisy_set(case3, truth3, case3_plan(case3), seed=5)
    a, b = estimate_necf(case3, ms), estimate_necf(case3, ms)
    assert np.array_equal(a.v_real, b.v_real) and np.array_equal(a.v_imag, b.v_imag)


def test_options_validation():
    with pytest.raises(ValueError):
        NecfOptions(tol=0.0)
    with pytest.raises(ValueError):
        NecfOptions(mu_factor=1.5)


def test_linear_model_rejected(case3, truth3):
    model = build_estimation_model(case3, noisy_set(case3, truth3, case3_plan(case3)))
    with pytest.raises(ValueError):
        solve_necf_model(model)
