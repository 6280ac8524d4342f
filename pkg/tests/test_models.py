import numpy as np
import pytest
import scipy.sparse as sp

from ecfse.circuit import (Ammeter, Circuit, ControlledVoltageSource, CurrentControlledCurrentSource,
                           CurrentSource, VoltageSource, stamp_admittance, stamp_branch)
from ecfse.grid import branch_pi_model
from ecfse.measurements import PowerPair, synthesize_measurements
from ecfse.models import (LINEAR, NONLINEAR, ModelOptions, admittance_bounds, build_estimation_model,
                          rtu_measurement_functions)

from conftest import case4_plans, noisy_set

PLANS = ["single-flow", "multi-flow", "injection+flows", "unmonitored", "null", "null+flows",
         "multi-flow-shunt"]


# -- measurement functions ---------------------------------------------------

def _currents(p, q, v, vr, vi):
    fn = rtu_measurement_functions(v, 1e-6, PowerPair(p, q, 1e-4, 1e-4))
    return fn.currents(vr, vi)


def test_rtu_functions_examples():
    assert _currents(1.0, 0.0, 1.0, 1.0, 0.0) == pytest.approx((1.0, 0.0))
    assert _currents(0.0, 1.0, 1.0, 1.0, 0.0) == pytest.approx((0.0, -1.0))
    ir, ii = _currents(0.5, 0.2, 1.02, 1.0, 0.1)
    assert ir == pytest.approx((0.5 / 1.0404) * 1.0 + (0.2 / 1.0404) * 0.1, rel=1e-14)
    assert ii == pytest.approx((0.5 / 1.0404) * 0.1 - (0.2 / 1.0404) * 1.0, rel=1e-14)


def test_rtu_functions_reproduce_load_current():
    # at the true voltage the model current equals conj(S / V)
    v = 1.01 * np.exp(-0.07j)
    s = 0.3 + 0.12j
    ir, ii = _currents(s.real, s.imag, abs(v), v.real, v.imag)
    assert complex(ir, ii) == pytest.approx(np.conj(s / v), abs=1e-15)


def test_rtu_functions_reject_zero_voltage():
    with pytest.raises(ValueError):
        rtu_measurement_functions(0.0, 1e-6, PowerPair(1, 1, 1, 1))


def test_interval_bounds_example():
    p, q, v = 0.2, 0.1, 1.0
    pair = PowerPair(p, q, (0.01 * p) ** 2, (0.01 * q) ** 2)
    (glo, ghi), (blo, bhi) = admittance_bounds(v, (0.002 * v) ** 2, pair)
    assert glo == pytest.approx(p * 0.99 / (v * 1.002) ** 2, rel=1e-14)
    assert ghi == pytest.approx(p * 1.01 / (v * 0.998) ** 2, rel=1e-14)
    assert blo == pytest.approx(q * 0.99 / (v * 1.002) ** 2, rel=1e-14)
    assert bhi == pytest.approx(q * 1.01 / (v * 0.998) ** 2, rel=1e-14)


# -- truth consistency --------------------------------------------------------

def _solve_with_targets(model):
    """Hold admittances at their targets and solve circuit + objective rows.

    Returns the core voltages and whether the stacked system has full
    column rank (so the voltages are determined, not just consistent).
    """
    n = model.n_vars
    x = np.zeros(n)
    hold = np.zeros(n, dtype=bool)
    for t in model.terms:
        if t.kind == "admittance":
            j = model.system.var_map[t.coeffs[0][0]]
            x[j] = t.target
            hold[j] = True
    free = np.flatnonzero(~hold)
    c, d, _ = model.objective_matrices()
    a = sp.vstack([model.system.jacobian(x), c]).tocsc()[:, free].toarray()
    r0 = np.r_[model.system.residual(x), c @ x - d]
    step, *_ = np.linalg.lstsq(a, -r0, rcond=None)
    x[free] += step
    vr, vi = model.state(x)
    return vr + 1j * vi, np.linalg.matrix_rank(a) == len(free), np.max(np.abs(a @ step + r0))


@pytest.mark.parametrize("mode", [LINEAR, NONLINEAR])
@pytest.mark.parametrize("plan", PLANS)
def test_truth_consistency(case4, truth4, exact, plan, mode):
    ms = synthesize_measurements(case4, truth4, case4_plans(case4)[plan], exact, 0)
    model = build_estimation_model(case4, ms, mode)
    v, full_rank, resid = _solve_with_targets(model)
    assert full_rank
    assert resid < 1e-9
    assert np.max(np.abs(v - truth4.voltage)) < 1e-9


@pytest.mark.parametrize("plan,kind", [
    ("single-flow", "single-flow"), ("multi-flow", "multi-flow"), ("injection+flows", "injection+flows"),
    ("null+flows", "null+flows"), ("unmonitored", "unmonitored"), ("null", "null"),
])
def test_bus_model_selection(case4, truth4, exact, plan, kind):
    ms = synthesize_measurements(case4, truth4, case4_plans(case4)[plan], exact, 0)
    kinds = build_estimation_model(case4, ms).kinds
    assert kind in {k for ks in kinds.values() for k in ks}


def _count(frag, cls):
    return sum(isinstance(e, cls) for e in frag.elements)


def test_fragment_topologies(case4, truth4, exact):
    plans = case4_plans(case4)

    def frag(plan, bus):
        ms = synthesize_measurements(case4, truth4, plans[plan], exact, 0)
        return build_estimation_model(case4, ms).fragments[bus]

    # bus 2 has three incident branches; one metered flow leaves two nodes
    # that follow the core through a controlled source in each plane
    assert _count(frag("single-flow", 2), ControlledVoltageSource) == 4
    # all three metered: no followers, auxiliary loop of three per plane
    assert _count(frag("multi-flow", 2), ControlledVoltageSource) == 6
    f = frag("injection+flows", 2)
    assert _count(f, Ammeter) == 2
    assert _count(f, CurrentControlledCurrentSource) == 2
    assert frag("null", 4).elements == []


def test_unmonitored_adds_two_free_variables(case4, truth4, exact):
    ms = synthesize_measurements(case4, truth4, case4_plans(case4)["unmonitored"], exact, 0)
    model = build_estimation_model(case4, ms)
    assert {"free3.r", "free3.i"} <= set(model.system.free_vars)
    labels = {v for t in model.terms for v, _ in t.coeffs}
    assert "free3.r" not in labels and "free3.i" not in labels


def test_pmu_fragment_channels(case4, truth4, exact):
    ms = synthesize_measurements(case4, truth4, case4_plans(case4)["null"], exact, 0)
    model = build_estimation_model(case4, ms)
    frag = model.fragments[1]
    # voltage source per plane, one current source per metered branch and plane
    assert _count(frag, VoltageSource) == 2
    slack_terms = [t for t in frag.objective_terms if t.kind == "slack"]
    assert len(slack_terms) == 2 + 2 * len(case4.incident_branches(1))


# -- node splitting transparency ----------------------------------------------

def _network(case, truth, split=None):
    """Network driven by the true injections except at bus 2, whose
    voltage is held at a perturbed value (its injection is then free, as
    for a bus without injection data). ``split`` selects a construction
    at bus 2. Returns bus voltages and the current drawn at bus 2."""
    c = Circuit()
    attach = {}
    for b in case.buses:
        c.add_node(f"b{b.id}")
    v = truth.voltage
    i_inj = np.conj(truth.injections / v)
    v2 = 1.01 * v[1] * np.exp(0.02j)
    incident = list(case.incident_branches(2))
    followers = []
    if split == "follower":
        # the first branch stays on the core, the others follow it
        for k in incident[1:]:
            node = f"b2.L{k}"
            c.add_node(node)
            attach[(2, k)] = node
            for p in "ri":
                name = f"cvs{k}.{p}"
                c.stamp_element(ControlledVoltageSource(name, c.ref(node, p), None, c.ref("b2", p)))
                followers.append(name)
    elif split == "ammeter":
        for k in incident:
            node = f"b2.L{k}"
            c.add_node(node)
            attach[(2, k)] = node
            for p in "ri":
                c.stamp_element(Ammeter(f"amm{k}.{p}", c.ref(node, p), c.ref("b2", p)))
    for k, br in enumerate(case.branches):
        a = attach.get((br.from_bus, k), f"b{br.from_bus}")
        z = attach.get((br.to_bus, k), f"b{br.to_bus}")
        stamp_branch(c, a, z, branch_pi_model(br))
    for b in case.buses:
        if b.g_shunt or b.b_shunt:
            stamp_admittance(c, f"b{b.id}", None, complex(b.g_shunt, b.b_shunt))
    for i, b in enumerate(case.buses):
        r, im = c.pair(f"b{b.id}")
        if i == case.slack_index or b.id == 2:
            held = v[i] if i == case.slack_index else v2
            c.stamp_element(VoltageSource(f"src{b.id}.r", r, None, held.real))
            c.stamp_element(VoltageSource(f"src{b.id}.i", im, None, held.imag))
        else:
            c.stamp_element(CurrentSource(None, r, i_inj[i].real))
            c.stamp_element(CurrentSource(None, im, i_inj[i].imag))
    system = c.assemble()
    x = system.solve()
    volts = np.array([complex(x[system.column(f"V(b{b.id}).r")], x[system.column(f"V(b{b.id}).i")])
                      for b in case.buses])
    drawn = -complex(x[system.column("I(src2.r)")], x[system.column("I(src2.i)")])
    for name in followers:
        val = -x[system.column(f"I({name})")]
        drawn += val if name.endswith(".r") else 1j * val
    return volts, drawn


@pytest.mark.parametrize("split", ["follower", "ammeter"])
def test_node_splitting_is_transparent(case4, truth4, split):
    plain, drawn = _network(case4, truth4)
    volts, drawn_split = _network(case4, truth4, split)
    assert abs(plain[1] - truth4.voltage[1]) > 1e-3
    assert np.max(np.abs(volts - plain)) < 1e-12
    assert abs(drawn_split - drawn) < 1e-12


def test_auxiliary_loop_recovers_truth(case4, truth4):
    # every branch at bus 2 gets its own node drawing the true flow current;
    # a detached node tied to all of them keeps them at one voltage
    v = truth4.voltage
    c = Circuit()
    for b in case4.buses:
        if b.id != 2:
            c.add_node(f"b{b.id}")
    c.add_node("aux")
    incident = list(case4.incident_branches(2))
    attach = {}
    for k in incident:
        node = f"b2.L{k}"
        c.add_node(node)
        attach[(2, k)] = node
        col = 0 if case4.branch_end(k, 2) == "from" else 1
        i_flow = np.conj(truth4.branch_flows[k, col] / v[1])
        for p, val in (("r", i_flow.real), ("i", i_flow.imag)):
            c.stamp_element(CurrentSource(c.ref(node, p), None, -val))
            c.stamp_element(ControlledVoltageSource(f"aux{k}.{p}", c.ref("aux", p), None, c.ref(node, p)))
    for k, br in enumerate(case4.branches):
        a = attach.get((br.from_bus, k), f"b{br.from_bus}")
        z = attach.get((br.to_bus, k), f"b{br.to_bus}")
        stamp_branch(c, a, z, branch_pi_model(br))
    for b in case4.buses:
        if b.g_shunt or b.b_shunt:
            stamp_admittance(c, f"b{b.id}", None, complex(b.g_shunt, b.b_shunt))
    i_inj = np.conj(truth4.injections / v)
    for i, b in enumerate(case4.buses):
        if b.id == 2:
            continue
        r, im = c.pair(f"b{b.id}")
        if i == case4.slack_index:
            c.stamp_element(VoltageSource("slack.r", r, None, v[i].real))
            c.stamp_element(VoltageSource("slack.i", im, None, v[i].imag))
        else:
            c.stamp_element(CurrentSource(None, r, i_inj[i].real))
            c.stamp_element(CurrentSource(None, im, i_inj[i].imag))
    system = c.assemble()
    # the parallel sources share their current freely, so use lstsq
    a = system.matrix.toarray()
    x, *_ = np.linalg.lstsq(a, system.rhs, rcond=None)
    assert np.max(np.abs(a @ x - system.rhs)) < 1e-12
    for k in incident:
        vk = complex(x[system.column(f"V(b2.L{k}).r")], x[system.column(f"V(b2.L{k}).i")])
        assert abs(vk - v[1]) < 1e-9
    for i, b in enumerate(case4.buses):
        if b.id != 2:
            vb = complex(x[system.column(f"V(b{b.id}).r")], x[system.column(f"V(b{b.id}).i")])
            assert abs(vb - v[i]) < 1e-9


# -- weights and bounds --------------------------------------------------------

def test_data_weights_are_inverse_variances(case4, truth4):
    ms = noisy_set(case4, truth4, case4_plans(case4)["injection+flows"], seed=3)
    model = build_estimation_model(case4, ms, LINEAR)
    checked = 0
    for t in model.terms:
        if t.kind in ("pmu_voltage", "pmu_current"):
            _, bus, channel, p = t.source
            pmu = ms.pmu_at(bus)
            ph = pmu.voltage if channel == "V" else dict(pmu.branch_currents)[channel]
            r = ph.rect()
            assert t.weight == pytest.approx(1.0 / (r.var_real if p == "r" else r.var_imag), rel=1e-14)
            checked += 1
        elif t.kind == "rtu":
            _, bus, which, spec = t.source
            v, var_v = ms.rtu_voltage(bus)
            rtu = ms.rtu_at(bus)
            pair = rtu.injection if which == "inj" else dict(rtu.flows)[which]
            fn = rtu_measurement_functions(v, var_v, pair)
            var = fn.var_g if spec in ("I_GR", "I_GI") else fn.var_b
            # the residual I - c V has variance var(c) V^2 at the measured V
            assert t.weight == pytest.approx(1.0 / (var * v * v), rel=1e-14)
            checked += 1
    assert checked > 10


def test_refresh_matches_rebuild(case4, truth4):
    plan = case4_plans(case4)["multi-flow"]
    a = build_estimation_model(case4, noisy_set(case4, truth4, plan, seed=1))
    ms2 = noisy_set(case4, truth4, plan, seed=2)
    fresh = build_estimation_model(case4, ms2)
    c1, d1, w1 = a.refresh(ms2).objective_matrices()
    c2, d2, w2 = fresh.objective_matrices()
    assert abs(c1 - c2).max() == 0 and np.array_equal(d1, d2) and np.array_equal(w1, w2)
    with pytest.raises(ValueError):
        a.refresh(noisy_set(case4, truth4, case4_plans(case4)["null"], seed=1))


@pytest.mark.parametrize("seed", range(8))
def test_bounds_bracket_noise_free_admittances(case4, truth4, seed):
    ms = noisy_set(case4, truth4, case4_plans(case4)["injection+flows"], seed=seed)
    model = build_estimation_model(case4, ms, NONLINEAR)
    v = truth4.voltage
    sources = {t.coeffs[0][0]: t.source for t in model.terms if t.kind == "admittance"}
    assert len(model.bounds) == len(sources) > 0
    for var, lo, hi in model.bounds:
        _, bus, which, gb = sources[var]
        i = case4.bus_index(bus)
        if which == "inj":
            s = -truth4.injections[i]
        else:
            col = 0 if case4.branch_end(which, bus) == "from" else 1
            s = -truth4.branch_flows[which, col]
        true = (s.real if gb == "G" else s.imag) / abs(v[i]) ** 2
        assert lo <= true <= hi


def test_options_validation():
    with pytest.raises(ValueError):
        ModelOptions(g_pmu=0.0)
    with pytest.raises(ValueError):
        build_estimation_model(None, None, mode="quadratic")
