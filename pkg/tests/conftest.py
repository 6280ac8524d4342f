import numpy as np
import pytest

from ecfse.grid import load_case, parse_matpower_case
from ecfse.measurements import NoiseSpec, PlacementPlan, PmuPlacement, RtuPlacement, synthesize_measurements
from ecfse.powerflow import solve_power_flow

CASE3 = """
function mpc = case3
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0   0   0 0 1 1.02 0 138 1 1.1 0.9;
 2 1 90  30  0 0 1 1.00 0 138 1 1.1 0.9;
 3 2 20  10  0 5 1 1.01 0 138 1 1.1 0.9;
];
mpc.gen = [
 1 0  0 300 -300 1.02 100 1 400 0;
 3 60 0 300 -300 1.01 100 1 400 0;
];
mpc.branch = [
 1 2 0.02 0.08 0.04 0 0 0 0    0 1;
 1 3 0.03 0.10 0.02 0 0 0 0    0 1;
 2 3 0.01 0.06 0.03 0 0 0 0.98 2 1;
];
"""

# bus 4 carries neither load nor generation; bus 3 has a shunt
CASE4 = """
function mpc = case4
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0  0  0 0  1 1.03 0 230 1 1.1 0.9;
 2 1 80 25 0 0  1 1.00 0 230 1 1.1 0.9;
 3 1 60 20 0 10 1 1.00 0 230 1 1.1 0.9;
 4 1 0  0  0 0  1 1.00 0 230 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 300 -300 1.03 100 1 400 0;
];
mpc.branch = [
 1 2 0.010 0.050 0.02 0 0 0 0    0 1;
 1 3 0.015 0.060 0.03 0 0 0 0    0 1;
 2 3 0.020 0.080 0.01 0 0 0 0    0 1;
 2 4 0.010 0.040 0.00 0 0 0 0.97 0 1;
 3 4 0.012 0.050 0.01 0 0 0 0    0 1;
];
"""


def case3_plan(case):
    """PMU at the slack, RTU injection+flow at bus 2, RTU injection at bus 3."""
    return PlacementPlan(
        pmus=[PmuPlacement(1, tuple(case.incident_branches(1)))],
        rtus=[RtuPlacement(2, True, True, (2,)), RtuPlacement(3, True, True, ())],
        name="case3-mixed",
    )


def case4_plans(case):
    """One plan per bus model, keyed by the model under test."""
    pmu = [PmuPlacement(1, tuple(case.incident_branches(1)))]
    inj3 = RtuPlacement(3, True, True, ())
    return {
        "single-flow": PlacementPlan(pmu, [RtuPlacement(2, True, False, (2,)), inj3]),
        "multi-flow": PlacementPlan(pmu, [RtuPlacement(2, True, False, (0, 2, 3)), inj3]),
        "injection+flows": PlacementPlan(pmu, [RtuPlacement(2, True, True, (2,)), inj3]),
        "unmonitored": PlacementPlan(pmu, [RtuPlacement(2, True, True, (2, 3))]),
        "null": PlacementPlan(pmu, [RtuPlacement(2, True, True, ()), inj3]),
        "null+flows": PlacementPlan(pmu, [RtuPlacement(2, True, True, ()), inj3,
                                          RtuPlacement(4, True, False, (3,))]),
        "multi-flow-shunt": PlacementPlan(pmu, [RtuPlacement(2, True, True, ()),
                                                RtuPlacement(3, True, False, (1, 2))]),
    }


@pytest.fixture(scope="session")
def case3():
    return parse_matpower_case(CASE3, name="case3")


@pytest.fixture(scope="session")
def truth3(case3):
    return solve_power_flow(case3)


@pytest.fixture(scope="session")
def case4():
    return parse_matpower_case(CASE4, name="case4")


@pytest.fixture(scope="session")
def truth4(case4):
    return solve_power_flow(case4)


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def truth14(ieee14):
    return solve_power_flow(ieee14)


@pytest.fixture(scope="session")
def ieee118():
    return load_case("ieee118")


@pytest.fixture(scope="session")
def truth118(ieee118):
    return solve_power_flow(ieee118)


@pytest.fixture
def exact():
    return NoiseSpec(kind="none")


def noisy_set(case, truth, plan, seed=0, kind="uniform"):
    return synthesize_measurements(case, truth, plan, NoiseSpec(kind=kind), seed)


def max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
