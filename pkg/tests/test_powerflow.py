import math

import numpy as np
import pytest

from ecfse.grid import load_case, parse_matpower_case
from ecfse.powerflow import (PowerFlowError, flows_from_state, solve_power_flow, true_state_from_json,
                             true_state_to_json)

TWO_BUS = """
mpc.baseMVA = 100;
mpc.bus = [ 1 3 0 0 0 0 1 1 0 100 1 1.1 0.9; 2 1 10 0 0 0 1 1 0 100 1 1.1 0.9 ];
mpc.gen = [ 1 0 0 100 -100 1 100 1 100 0 ];
mpc.branch = [ 1 2 0 0.1 0 0 0 0 0 0 1 ];
"""


def _losses(case, v):
    """Series and shunt consumption from branch currents, element by element."""
    total = 0j
    for br in case.branches:
        vf, vt = v[case.bus_index(br.from_bus)], v[case.bus_index(br.to_bus)]
        t = br.tap_ratio * complex(math.cos(br.phase_shift), math.sin(br.phase_shift))
        v_int = vf / t
        i_series = (v_int - vt) / complex(br.r, br.x)
        total += complex(br.r, br.x) * abs(i_series) ** 2
        total += -0.5j * br.b_charging * (abs(v_int) ** 2 + abs(vt) ** 2)
    for i, bus in enumerate(case.buses):
        total += complex(bus.g_shunt, -bus.b_shunt) * abs(v[i]) ** 2
    return total


def test_two_bus_closed_form():
    case = parse_matpower_case(TWO_BUS)
    s = solve_power_flow(case)
    vmag = math.sqrt((1 + math.sqrt(1 - 4e-4)) / 2)
    delta = -math.asin(0.01 / vmag)
    assert abs(s.voltage[1] - vmag * complex(math.cos(delta), math.sin(delta))) < 1e-10


def test_zero_load_case_is_flat():
    text = TWO_BUS.replace("2 1 10 0", "2 1 0 0")
    s = solve_power_flow(parse_matpower_case(text))
    assert np.allclose(s.voltage, 1.0)
    assert np.max(np.abs(s.branch_flows)) < 1e-12


@pytest.mark.parametrize("name", ["ieee14", "ieee57", "ieee118"])
def test_bundled_cases_converge_and_conserve(name):
    case = load_case(name)
    s = solve_power_flow(case)
    assert s.mismatch < 1e-8
    assert s.iterations <= 10
    assert abs(np.sum(s.injections) - _losses(case, s.voltage)) < 1e-9
    spec = np.array([complex(b.p_gen - b.p_load, b.q_gen - b.q_load) for b in case.buses])
    pq = [i for i, b in enumerate(case.buses) if b.kind.value == "pq"]
    assert np.max(np.abs(s.injections[pq] - spec[pq])) < 1e-9


def test_flows_examples(ieee14, truth14):
    text = """
mpc.baseMVA = 100;
mpc.bus = [ 1 3 0 0 0 0 1 1 0 100 1 1.1 0.9; 2 1 0 0 0 0 1 1 0 100 1 1.1 0.9 ];
mpc.branch = [ 1 2 0 0.1 0.02 0 0 0 0 0 1 ];
"""
    case = parse_matpower_case(text)
    flows, _ = flows_from_state(case, np.ones(2), np.zeros(2))
    assert flows[0, 0] == pytest.approx(-0.01j)
    assert flows[0, 1] == pytest.approx(-0.01j)
    null = [i for i, b in enumerate(ieee14.buses) if b.is_null_injection]
    assert null and np.max(np.abs(truth14.injections[null])) < 1e-8


def test_truth_json_round_trip(truth14):
    again = true_state_from_json(true_state_to_json(truth14))
    assert np.array_equal(again.voltage, truth14.voltage)
    assert np.array_equal(again.branch_flows, truth14.branch_flows)


def test_nonconvergence_reported():
    heavy = TWO_BUS.replace("2 1 10 0", "2 1 2000 0")
    with pytest.raises(PowerFlowError, match="no convergence|singular"):
        solve_power_flow(parse_matpower_case(heavy), max_iter=8)
