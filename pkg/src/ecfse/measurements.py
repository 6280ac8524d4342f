"""Measurement records, placement plans and measurement synthesis.

Sign conventions:

* RTU injections ``(P, Q)`` and PMU injection currents use load
  convention: positive values are consumed at the bus.
* RTU flows ``(P_L, Q_L)`` are the power the bus withdraws from the line
  at the metered end (the negative of the power sent into the line).
* PMU branch currents flow from the bus into the branch.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

__all__ = [
    "RectPhasor", "Phasor", "PowerPair", "PmuRecord", "RtuRecord", "MeasurementSet",
    "NoiseSpec", "PmuPlacement", "RtuPlacement", "PlacementPlan",
    "polar_to_rect", "synthesize_measurements", "make_placement", "full_pmu_plan",
    "with_pmu_penetration", "load_placement", "measurements_to_json", "measurements_from_json",
]


@dataclass(frozen=True)
class RectPhasor:
    z_real: float
    z_imag: float
    var_real: float
    var_imag: float


def polar_to_rect(mag, angle, var_mag, var_angle):
    """Rectangular form of a polar measurement with first-order variances."""
    c, s = math.cos(angle), math.sin(angle)
    return RectPhasor(
        z_real=mag * c,
        z_imag=mag * s,
        var_real=c * c * var_mag + (mag * s) ** 2 * var_angle,
        var_imag=s * s * var_mag + (mag * c) ** 2 * var_angle,
    )


@dataclass(frozen=True)
class Phasor:
    mag: float
    angle: float
    var_mag: float
    var_angle: float

    def rect(self):
        return polar_to_rect(self.mag, self.angle, self.var_mag, self.var_angle)

    @property
    def complex(self):
        return self.mag * complex(math.cos(self.angle), math.sin(self.angle))


@dataclass(frozen=True)
class PowerPair:
    p: float
    q: float
    var_p: float
    var_q: float


@dataclass(frozen=True)
class PmuRecord:
    bus: int
    voltage: Phasor
    branch_currents: tuple = ()  # of (branch index, Phasor)
    injection: Phasor | None = None

    def __post_init__(self):
        object.__setattr__(self, "branch_currents", tuple((int(b), p) for b, p in self.branch_currents))
        phasors = [self.voltage] + [p for _, p in self.branch_currents]
        if self.injection is not None:
            phasors.append(self.injection)
        for p in phasors:
            if p.var_mag <= 0 or p.var_angle <= 0:
                raise ValueError(f"PMU at bus {self.bus}: variances must be positive")
        if self.voltage.mag <= 0:
            raise ValueError(f"PMU at bus {self.bus}: voltage magnitude must be positive")


@dataclass(frozen=True)
class RtuRecord:
    """RTU data at one bus. ``v_mag`` is ``None`` only for an RTU
    co-located with a PMU, whose voltage magnitude is then used."""

    bus: int
    v_mag: float | None = None
    var_v: float | None = None
    injection: PowerPair | None = None
    flows: tuple = ()  # of (branch index, PowerPair)

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple((int(b), p) for b, p in self.flows))
        if self.v_mag is not None and (self.var_v is None or self.var_v <= 0):
            raise ValueError(f"RTU at bus {self.bus}: voltage variance must be positive")
        pairs = [p for _, p in self.flows] + ([self.injection] if self.injection else [])
        for p in pairs:
            if p.var_p <= 0 or p.var_q <= 0:
                raise ValueError(f"RTU at bus {self.bus}: power variances must be positive")
        branches = [b for b, _ in self.flows]
        if len(set(branches)) != len(branches):
            raise ValueError(f"RTU at bus {self.bus}: duplicate flow branch ids")


@dataclass(frozen=True)
class NoiseSpec:
    """Relative standard deviations (fractions of the true value) and the
    absolute PMU angle deviation in degrees. Floors keep variances of
    near-zero quantities positive."""

    kind: str = "uniform"
    rtu_voltage: float = 0.002
    injection: float = 0.01
    flow: float = 0.01
    pmu_voltage: float = 0.0002
    pmu_current: float = 0.0002
    pmu_angle_deg: float = 0.01
    power_floor: float = 1e-4
    current_floor: float = 1e-5
    voltage_floor: float = 1e-5
    angle_floor_deg: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        for name in ("rtu_voltage", "injection", "flow", "pmu_voltage", "pmu_current", "pmu_angle_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class PmuPlacement:
    bus: int
    currents: tuple = ()  # branch indices
    injection: bool = False


@dataclass(frozen=True)
class RtuPlacement:
    bus: int
    voltage: bool = True
    injection: bool = False
    flows: tuple = ()  # branch indices


@dataclass(frozen=True)
class PlacementPlan:
    pmus: tuple = ()
    rtus: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pmus", tuple(self.pmus))
        object.__setattr__(self, "rtus", tuple(self.rtus))

    def counts(self):
        """Counts in the layout of the usual measurement-set tables."""
        return {
            "pmu_buses": len(self.pmus),
            "voltage": sum(r.voltage for r in self.rtus),
            "injection": sum(r.injection for r in self.rtus),
            "flows": sum(len(r.flows) for r in self.rtus),
        }

    def validate(self, case):
        pmu_buses = {p.bus for p in self.pmus}
        if len(pmu_buses) != len(self.pmus):
            raise ValueError("duplicate PMU bus in plan")
        rtu_buses = [r.bus for r in self.rtus]
        if len(set(rtu_buses)) != len(rtu_buses):
            raise ValueError("duplicate RTU bus in plan")
        for p in self.pmus:
            case.bus_index(p.bus)
            for k in p.currents:
                case.branch_end(k, p.bus)
        for r in self.rtus:
            case.bus_index(r.bus)
            for k in r.flows:
                case.branch_end(k, r.bus)
            if not r.voltage and r.bus not in pmu_buses:
                raise ValueError(f"RTU at bus {r.bus} needs a voltage magnitude (no PMU at that bus)")
            if r.flows and r.bus in pmu_buses:
                raise ValueError(f"RTU flows at PMU bus {r.bus} are not supported")
            if r.injection and any(p.bus == r.bus and p.injection for p in self.pmus):
                raise ValueError(f"bus {r.bus} has both PMU and RTU injection measurements")
        n_scalar = sum(2 + 2 * len(p.currents) + 2 * p.injection for p in self.pmus)
        n_scalar += sum(r.voltage + 2 * r.injection + 2 * len(r.flows) for r in self.rtus)
        if n_scalar < 2 * case.n_bus - 1:
            warnings.warn(f"placement has {n_scalar} scalar measurements for "
                          f"{2 * case.n_bus - 1} states; the set is likely unobservable",
                          stacklevel=2)
        return self

    def to_dict(self):
        return {
            "format": "ecfse-plan/1",
            "name": self.name,
            "pmus": [{"bus": p.bus, "currents": list(p.currents), "injection": p.injection} for p in self.pmus],
            "rtus": [{"bus": r.bus, "voltage": r.voltage, "injection": r.injection, "flows": list(r.flows)}
                     for r in self.rtus],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "ecfse-plan/1":
            raise ValueError(f"unsupported plan format {doc.get('format')!r}")
        return cls(
            pmus=[PmuPlacement(p["bus"], tuple(p.get("currents", ())), bool(p.get("injection", False)))
                  for p in doc.get("pmus", [])],
            rtus=[RtuPlacement(r["bus"], bool(r.get("voltage", True)), bool(r.get("injection", False)),
                               tuple(r.get("flows", ()))) for r in doc.get("rtus", [])],
            name=doc.get("name", ""),
        )


def load_placement(spec):
    """Load a bundled placement (``ieee14``) or a plan JSON file."""
    spec = str(spec)
    bundled = resources.files("ecfse.data.placements").joinpath(f"{spec}.json")
    if bundled.is_file():
        return PlacementPlan.from_dict(json.loads(bundled.read_text()))
    with open(spec) as fh:
        return PlacementPlan.from_dict(json.load(fh))


def make_placement(case, pmu_buses, n_voltage, n_injection, n_flow, name=""):
    """Deterministic plan with the requested measurement counts.

    PMUs measure their bus voltage and every incident branch current. RTU
    voltages go to non-PMU buses (buses with load or generation first),
    injections to RTU buses and then to PMU buses, and flows are dealt
    round-robin over the RTU buses' incident branches.
    """
    pmu_set = list(dict.fromkeys(pmu_buses))
    slack = case.buses[case.slack_index].id
    if slack not in pmu_set:
        pmu_set.insert(0, slack)
    others = [b for b in case.buses if b.id not in pmu_set]
    others.sort(key=lambda b: (b.is_null_injection, b.id))
    if n_voltage > len(others):
        raise ValueError(f"cannot place {n_voltage} RTU voltages on {len(others)} buses")
    rtu_buses = [b.id for b in others[:n_voltage]]
    candidates = [b for b in rtu_buses if not case.bus(b).is_null_injection]
    candidates += [b for b in pmu_set if not case.bus(b).is_null_injection and b != slack]
    candidates += [b for b in rtu_buses if case.bus(b).is_null_injection]
    if n_injection > len(candidates):
        raise ValueError(f"cannot place {n_injection} injections")
    inj = set(candidates[:n_injection])

    pending = {b: list(case.incident_branches(b)) for b in rtu_buses}
    flows = {b: [] for b in rtu_buses}
    placed = 0
    while placed < n_flow:
        progress = False
        for b in rtu_buses:
            if placed == n_flow:
                break
            if pending[b]:
                flows[b].append(pending[b].pop(0))
                placed += 1
                progress = True
        if not progress:
            raise ValueError(f"cannot place {n_flow} flows")

    pmus = [PmuPlacement(b, tuple(case.incident_branches(b)), False) for b in pmu_set]
    rtus = [RtuPlacement(b, True, b in inj, tuple(flows[b])) for b in rtu_buses]
    rtus += [RtuPlacement(b, False, True, ()) for b in pmu_set if b in inj]
    return PlacementPlan(pmus=pmus, rtus=rtus, name=name).validate(case)


def full_pmu_plan(case, name="full-pmu"):
    pmus = [PmuPlacement(b.id, tuple(case.incident_branches(b.id)), False) for b in case.buses]
    return PlacementPlan(pmus=pmus, rtus=(), name=name)


def with_pmu_penetration(plan, case, level):
    """Upgrade ``plan`` so that a fraction ``level`` of buses carries a PMU.

    Existing PMUs are kept; new ones are added in order of decreasing bus
    degree. RTUs at upgraded buses keep only their injection measurement.
    """
    if not 0.0 < level <= 1.0:
        raise ValueError("penetration level must be in (0, 1]")
    target = max(len(plan.pmus), math.ceil(level * case.n_bus - 1e-9))
    chosen = [p.bus for p in plan.pmus]
    order = sorted((b.id for b in case.buses), key=lambda i: (-len(case.incident_branches(i)), i))
    for b in order:
        if len(chosen) >= target:
            break
        if b not in chosen:
            chosen.append(b)
    chosen_set = set(chosen)
    pmus = list(plan.pmus) + [PmuPlacement(b, tuple(case.incident_branches(b)), False)
                              for b in chosen[len(plan.pmus):]]
    rtus = []
    for r in plan.rtus:
        if r.bus in chosen_set:
            if r.injection:
                rtus.append(RtuPlacement(r.bus, False, True, ()))
        else:
            rtus.append(r)
    name = f"{plan.name}@pmu{level:g}" if plan.name else f"pmu{level:g}"
    return PlacementPlan(pmus=pmus, rtus=rtus, name=name).validate(case)


@dataclass(frozen=True)
class MeasurementSet:
    pmus: tuple = ()
    rtus: tuple = ()
    seed: int | None = None
    plan: PlacementPlan | None = None
    noise: NoiseSpec | None = None
    _pmu_index: dict = field(default=None, init=False, repr=False, compare=False)
    _rtu_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pmus", tuple(self.pmus))
        object.__setattr__(self, "rtus", tuple(self.rtus))
        object.__setattr__(self, "_pmu_index", {p.bus: p for p in self.pmus})
        object.__setattr__(self, "_rtu_index", {r.bus: r for r in self.rtus})
        for r in self.rtus:
            if r.v_mag is None and r.bus not in self._pmu_index:
                raise ValueError(f"RTU at bus {r.bus} has no voltage magnitude")

    def pmu_at(self, bus):
        return self._pmu_index.get(bus)

    def rtu_at(self, bus):
        return self._rtu_index.get(bus)

    def rtu_voltage(self, bus):
        """Voltage magnitude and variance used by the RTU at ``bus``."""
        rtu = self._rtu_index[bus]
        if rtu.v_mag is not None:
            return rtu.v_mag, rtu.var_v
        pmu = self._pmu_index[bus]
        return pmu.voltage.mag, pmu.voltage.var_mag

    def scale_variances(self, factor):
        """Copy with every variance multiplied by ``factor``."""
        def ph(p):
            return replace(p, var_mag=p.var_mag * factor, var_angle=p.var_angle * factor)

        def pw(p):
            return replace(p, var_p=p.var_p * factor, var_q=p.var_q * factor)

        pmus = [replace(p, voltage=ph(p.voltage), branch_currents=[(b, ph(c)) for b, c in p.branch_currents],
                        injection=ph(p.injection) if p.injection else None) for p in self.pmus]
        rtus = [replace(r, var_v=r.var_v * factor if r.var_v is not None else None,
                        injection=pw(r.injection) if r.injection else None,
                        flows=[(b, pw(f)) for b, f in r.flows]) for r in self.rtus]
        return replace(self, pmus=pmus, rtus=rtus)


def _draw(rng, kind, true, sigma):
    if kind == "none" or sigma == 0.0:
        return true
    if kind == "uniform":
        return true + rng.uniform(-sigma, sigma)
    return true + rng.normal(0.0, sigma)


def synthesize_measurements(case, truth, plan, noise=None, seed=0):
    """Draw a measurement set from a power-flow solution.

    With uniform noise each value is drawn from ``[z - s, z + s]`` where
    ``s`` is the relative deviation times ``|z|`` (floored). The recorded
    variance is ``s**2``.
    """
    noise = noise or NoiseSpec()
    plan.validate(case)
    rng = np.random.default_rng(seed)
    v = truth.voltage
    f_idx, t_idx, _ = case.branch_arrays()
    kind = noise.kind

    def sig(rel, value, floor):
        return max(rel * abs(value), floor)

    ang_sigma = max(math.radians(noise.pmu_angle_deg), math.radians(noise.angle_floor_deg))

    def phasor(z, rel, floor):
        mag, ang = abs(z), math.atan2(z.imag, z.real)
        s_mag = sig(rel, mag, floor)
        m = _draw(rng, kind, mag, s_mag)
        a = _draw(rng, kind, ang, ang_sigma)
        return Phasor(m, a, s_mag ** 2, ang_sigma ** 2)

    def power(s, rel):
        sp_, sq_ = sig(rel, s.real, noise.power_floor), sig(rel, s.imag, noise.power_floor)
        p = _draw(rng, kind, s.real, sp_)
        q = _draw(rng, kind, s.imag, sq_)
        return PowerPair(p, q, sp_ ** 2, sq_ ** 2)

    def branch_current(k, bus):
        i = case.bus_index(bus)
        col = 0 if case.branch_end(k, bus) == "from" else 1
        return np.conj(truth.branch_flows[k, col] / v[i])

    pmus = []
    for p in plan.pmus:
        i = case.bus_index(p.bus)
        volt = phasor(v[i], noise.pmu_voltage, noise.voltage_floor)
        currents = [(k, phasor(branch_current(k, p.bus), noise.pmu_current, noise.current_floor))
                    for k in p.currents]
        inj = None
        if p.injection:
            i_load = -np.conj(truth.injections[i] / v[i])
            inj = phasor(i_load, noise.pmu_current, noise.current_floor)
        pmus.append(PmuRecord(p.bus, volt, currents, inj))

    rtus = []
    for r in plan.rtus:
        i = case.bus_index(r.bus)
        v_mag = var_v = None
        if r.voltage:
            s_v = sig(noise.rtu_voltage, abs(v[i]), noise.voltage_floor)
            v_mag, var_v = _draw(rng, kind, abs(v[i]), s_v), s_v ** 2
        inj = power(-truth.injections[i], noise.injection) if r.injection else None
        flows = []
        for k in r.flows:
            col = 0 if case.branch_end(k, r.bus) == "from" else 1
            flows.append((k, power(-truth.branch_flows[k, col], noise.flow)))
        rtus.append(RtuRecord(r.bus, v_mag, var_v, inj, flows))
    return MeasurementSet(pmus=pmus, rtus=rtus, seed=seed, plan=plan, noise=noise)


# --------------------------------------------------------------------------
# JSON

def measurements_to_json(ms):
    def ph(p):
        return None if p is None else asdict(p)

    doc = {
        "format": "ecfse-measurements/1",
        "seed": ms.seed,
        "noise": asdict(ms.noise) if ms.noise else None,
        "plan": ms.plan.to_dict() if ms.plan else None,
        "pmus": [{"bus": p.bus, "voltage": ph(p.voltage),
                  "branch_currents": [{"branch": b, **asdict(c)} for b, c in p.branch_currents],
                  "injection": ph(p.injection)} for p in ms.pmus],
        "rtus": [{"bus": r.bus, "v_mag": r.v_mag, "var_v": r.var_v,
                  "injection": None if r.injection is None else asdict(r.injection),
                  "flows": [{"branch": b, **asdict(f)} for b, f in r.flows]} for r in ms.rtus],
    }
    return json.dumps(doc, indent=1)


def measurements_from_json(text):
    doc = json.loads(text)
    if doc.get("format") != "ecfse-measurements/1":
        raise ValueError(f"unsupported measurement format {doc.get('format')!r}")

    def ph(d):
        return None if d is None else Phasor(d["mag"], d["angle"], d["var_mag"], d["var_angle"])

    def pw(d):
        return None if d is None else PowerPair(d["p"], d["q"], d["var_p"], d["var_q"])

    pmus = [PmuRecord(p["bus"], ph(p["voltage"]),
                      [(c["branch"], ph(c)) for c in p.get("branch_currents", [])],
                      ph(p.get("injection"))) for p in doc.get("pmus", [])]
    rtus = [RtuRecord(r["bus"], r.get("v_mag"), r.get("var_v"), pw(r.get("injection")),
                      [(f["branch"], pw(f)) for f in r.get("flows", [])]) for r in doc.get("rtus", [])]
    plan = PlacementPlan.from_dict(doc["plan"]) if doc.get("plan") else None
    noise = NoiseSpec(**doc["noise"]) if doc.get("noise") else None
    return MeasurementSet(pmus=pmus, rtus=rtus, seed=doc.get("seed"), plan=plan, noise=noise)
