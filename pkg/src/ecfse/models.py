"""Circuit models of measurements and assembly of the estimation circuit.

Each bus contributes a *core* node pair carrying the bus voltage. The
measurement set decides what else hangs off it:

* PMU: voltage source behind a slack conductance ``g_pmu``; every metered
  branch current becomes a current source in parallel with ``g_pmu``
  between the core node and the node the branch is attached to.
* RTU injection: linear current sources (``linear`` mode) or a bounded
  variable admittance (``nonlinear`` mode).
* RTU flows without an injection measurement: the bus is split into one
  node per incident branch; unmetered nodes follow the core voltage
  through controlled voltage sources and, with two or more metered
  branches, a detached node tied to every metered node by controlled
  sources keeps them at a common voltage.
* RTU flows with an injection (or known-zero injection): each metered
  branch is reached through an ammeter whose reading drives a detached
  sub-circuit holding the flow model and a slack conductance ``g_flow``.
* No data: free current sources. Known zero injection: nothing.

Slack conductance currents are objective terms; in linear mode their
weight is ``slack_dominance`` times the inverse variance of the channel
they guard so the circuit-consistency terms dominate the data terms.

Every objective term carries a *source* key naming the measurement
channel its numbers come from, so a model can be refreshed with a new
measurement set of the same layout without re-stamping the circuit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .circuit import (Ammeter, BilinearLoad, Circuit, CircuitError, Conductance,
                      ControlledVoltageSource, CurrentControlledCurrentSource,
                      CurrentSource, Plane, VariableCurrentSource, VoltageSource,
                      stamp_admittance, stamp_branch)
from .grid import branch_pi_model

__all__ = [
    "LINEAR", "NONLINEAR", "ModelOptions", "ObjectiveTerm", "ModelFragment",
    "RtuLinearFunctions", "EstimationModel", "rtu_measurement_functions",
    "admittance_bounds", "build_estimation_model", "measurement_layout",
]

LINEAR = "linear"
NONLINEAR = "nonlinear"


@dataclass(frozen=True)
class ModelOptions:
    g_pmu: float = 100.0
    g_flow: float = 100.0
    slack_dominance: float = 100.0
    gauge_weight: float = 1.0
    bound_sigmas: float = 1.0

    def __post_init__(self):
        for name in ("g_pmu", "g_flow", "slack_dominance", "gauge_weight", "bound_sigmas"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ObjectiveTerm:
    """``weight * (sum(coef * x[var]) - target)**2``."""

    coeffs: tuple
    target: float
    weight: float
    kind: str
    label: str = ""
    source: tuple = ()


@dataclass
class ModelFragment:
    elements: list = field(default_factory=list)
    objective_terms: list = field(default_factory=list)
    bound_specs: list = field(default_factory=list)

    def extend(self, other):
        self.elements += other.elements
        self.objective_terms += other.objective_terms
        self.bound_specs += other.bound_specs


@dataclass(frozen=True)
class RtuLinearFunctions:
    """Current model of one RTU power pair at measured voltage ``v``.

    ``I_GR = g V_R``, ``I_BR = b V_I``, ``I_GI = g V_I``, ``I_BI = b V_R``
    with ``I_R = I_GR + I_BR`` and ``I_I = I_GI - I_BI`` in load
    convention.
    """

    g: float
    b: float
    var_g: float
    var_b: float
    v_mag: float

    def currents(self, v_real, v_imag):
        return (self.g * v_real + self.b * v_imag, self.g * v_imag - self.b * v_real)

    def specs(self):
        return (("I_GR", self.g, Plane.REAL), ("I_BR", self.b, Plane.IMAG),
                ("I_GI", self.g, Plane.IMAG), ("I_BI", self.b, Plane.REAL))


_SPEC_PLANE = {"I_GR": ("g", "r"), "I_BR": ("b", "i"), "I_GI": ("g", "i"), "I_BI": ("b", "r")}


def rtu_measurement_functions(v_mag, var_v, pair):
    """Linear measurement functions of a power pair at voltage ``v_mag``.

    ``pair`` is a :class:`~ecfse.measurements.PowerPair`; variances of
    ``P/V**2`` and ``Q/V**2`` come from first-order propagation.
    """
    if v_mag <= 0:
        raise ValueError("voltage magnitude must be positive")
    v2 = v_mag * v_mag
    g, b = pair.p / v2, pair.q / v2
    var_g = pair.var_p / v2 ** 2 + (2.0 * g / v_mag) ** 2 * var_v
    var_b = pair.var_q / v2 ** 2 + (2.0 * b / v_mag) ** 2 * var_v
    return RtuLinearFunctions(g, b, var_g, var_b, v_mag)


def _ratio_interval(num_lo, num_hi, v_lo, v_hi):
    if v_lo <= 0:
        raise ValueError("voltage interval must stay positive")
    corners = [n / (v * v) for n in (num_lo, num_hi) for v in (v_lo, v_hi)]
    return min(corners), max(corners)


def admittance_bounds(v_mag, var_v, pair, n_sigma=1.0):
    """Interval-arithmetic bounds of ``P/V**2`` and ``Q/V**2``."""
    sv = n_sigma * np.sqrt(var_v)
    sp_, sq_ = n_sigma * np.sqrt(pair.var_p), n_sigma * np.sqrt(pair.var_q)
    g = _ratio_interval(pair.p - sp_, pair.p + sp_, v_mag - sv, v_mag + sv)
    b = _ratio_interval(pair.q - sq_, pair.q + sq_, v_mag - sv, v_mag + sv)
    return g, b


def measurement_layout(measurements):
    """Hashable description of which channels a measurement set carries."""
    pmus = tuple((p.bus, tuple(k for k, _ in p.branch_currents), p.injection is not None)
                 for p in measurements.pmus)
    rtus = tuple((r.bus, r.v_mag is not None, r.injection is not None, tuple(k for k, _ in r.flows))
                 for r in measurements.rtus)
    return pmus, rtus


class _Values:
    """Numbers of every objective term, keyed by source."""

    def __init__(self, measurements, mode, options):
        self.ms = measurements
        self.linear = mode == LINEAR
        self.opt = options
        self.dominance = options.slack_dominance if self.linear else 1.0
        self._rect = {}
        self._rtu = {}

    def rect(self, bus, channel):
        key = (bus, channel)
        if key not in self._rect:
            pmu = self.ms.pmu_at(bus)
            if channel == "V":
                ph = pmu.voltage
            elif channel == "inj":
                ph = pmu.injection
            else:
                ph = dict(pmu.branch_currents)[channel]
            r = ph.rect()
            self._rect[key] = {"r": (r.z_real, r.var_real), "i": (r.z_imag, r.var_imag)}
        return self._rect[key]

    def pair(self, bus, which):
        rtu = self.ms.rtu_at(bus)
        return rtu.injection if which == "inj" else dict(rtu.flows)[which]

    def rtu(self, bus, which):
        key = (bus, which)
        if key not in self._rtu:
            v_mag, var_v = self.ms.rtu_voltage(bus)
            self._rtu[key] = rtu_measurement_functions(v_mag, var_v, self.pair(bus, which))
        return self._rtu[key]

    def bounds(self, bus, which):
        v_mag, var_v = self.ms.rtu_voltage(bus)
        return admittance_bounds(v_mag, var_v, self.pair(bus, which), self.opt.bound_sigmas)

    def __call__(self, source):
        """``(coefficients, target, weight)`` of the term for ``source``."""
        kind = source[0]
        if kind == "pmu":
            _, bus, channel, p = source
            z, var = self.rect(bus, channel)[p]
            return (1.0,), z, 1.0 / var
        if kind == "pmu_slack":
            _, bus, channel, p = source
            _, var = self.rect(bus, channel)[p]
            g = self.opt.g_pmu
            if channel == "V":
                # this conductance also carries the bus current mismatch,
                # so it is dominated in both modes
                return (g, -g), 0.0, self.opt.slack_dominance / (var * g * g)
            return (g, -g), 0.0, self.dominance / var
        if kind == "rtu":
            _, bus, which, spec = source
            fn = self.rtu(bus, which)
            gb, _ = _SPEC_PLANE[spec]
            coef, var_c = (fn.g, fn.var_g) if gb == "g" else (fn.b, fn.var_b)
            return (1.0, -coef), 0.0, 1.0 / (var_c * fn.v_mag ** 2)
        if kind == "admittance":
            _, bus, which, gb = source
            fn = self.rtu(bus, which)
            return (1.0,), (fn.g if gb == "G" else fn.b), 1.0 / (fn.var_g if gb == "G" else fn.var_b)
        if kind == "flow_slack":
            _, bus, which = source
            fn = self.rtu(bus, which)
            w = 1.0 / ((fn.var_g + fn.var_b) * fn.v_mag ** 2)
            return (self.opt.g_flow,), 0.0, self.opt.slack_dominance * w
        if kind == "gauge":
            return (1.0,), 0.0, self.opt.gauge_weight
        raise ValueError(f"unknown term source {source!r}")


def _v(name, plane):
    return f"V({name}).{plane}"


class _Builder:
    def __init__(self, case, measurements, mode, options):
        if mode not in (LINEAR, NONLINEAR):
            raise ValueError(f"unknown mode {mode!r}")
        self.case = case
        self.ms = measurements
        self.mode = mode
        self.opt = options
        self.values = _Values(measurements, mode, options)
        self.circuit = Circuit()
        self.attach = {}
        self.shunt_node = {}
        self.initial = {}
        self.fragments = {}
        self.kinds = {}
        self.core = {}
        for b in case.buses:
            name = f"b{b.id}"
            self.circuit.add_node(name)
            self.core[b.id] = name

    @property
    def linear(self):
        return self.mode == LINEAR

    def stamp(self, frag, element):
        self.circuit.stamp_element(element)
        frag.elements.append(element)

    def term(self, frag, source, names, kind, label):
        coefs, target, weight = self.values(source)
        frag.objective_terms.append(ObjectiveTerm(tuple(zip(names, coefs)), target, weight, kind, label, source))

    def refs(self, name):
        return self.circuit.pair(name)

    def new_node(self, name):
        self.circuit.add_node(name)
        return name

    def conductance(self, frag, a, b, g):
        ar, ai = self.refs(a)
        br, bi = (None, None) if b is None else self.refs(b)
        self.stamp(frag, Conductance(ar, br, g))
        self.stamp(frag, Conductance(ai, bi, g))

    # ---- RTU current models -------------------------------------------

    def rtu_load(self, frag, node, ctrl, bus, which):
        """Injection-style RTU model drawing current from ``node``; the
        measurement functions use the voltage of ``ctrl``."""
        tag = f"rtu{bus}.{'inj' if which == 'inj' else f'flow{which}'}"
        nr, ni = self.refs(node)
        cr, ci = self.refs(ctrl)
        if self.linear:
            names = {s: f"{tag}.{s}" for s in _SPEC_PLANE}
            self.stamp(frag, VariableCurrentSource(nr, None, names["I_GR"]))
            self.stamp(frag, VariableCurrentSource(nr, None, names["I_BR"]))
            self.stamp(frag, VariableCurrentSource(ni, None, names["I_GI"]))
            self.stamp(frag, VariableCurrentSource(None, ni, names["I_BI"]))
            for spec, (_, plane) in _SPEC_PLANE.items():
                self.term(frag, ("rtu", bus, which, spec), (names[spec], _v(ctrl, plane)),
                          "rtu", names[spec])
        else:
            g_var, b_var = f"{tag}.G", f"{tag}.B"
            self.stamp(frag, BilinearLoad(nr, ni, cr, ci, g_var, b_var))
            self.term(frag, ("admittance", bus, which, "G"), (g_var,), "admittance", g_var)
            self.term(frag, ("admittance", bus, which, "B"), (b_var,), "admittance", b_var)
            (glo, ghi), (blo, bhi) = self.values.bounds(bus, which)
            frag.bound_specs.append((g_var, glo, ghi))
            frag.bound_specs.append((b_var, blo, bhi))
            self.initial[g_var] = 0.5 * (glo + ghi)
            self.initial[b_var] = 0.5 * (blo + bhi)

    # ---- per-bus builders ---------------------------------------------

    def build_pmu(self, rec):
        frag = ModelFragment()
        bus = rec.bus
        core = self.core[bus]
        g = self.opt.g_pmu
        pmu = self.new_node(f"pmu{bus}")
        volt = self.values.rect(bus, "V")
        for p in "ri":
            ref = self.circuit.ref(pmu, p)
            if self.linear:
                var_name = f"pmu{bus}.V.{p}"
                self.stamp(frag, VoltageSource(f"Vpmu{bus}.{p}", ref, None, var=var_name))
                self.term(frag, ("pmu", bus, "V", p), (var_name,), "pmu_voltage", var_name)
            else:
                self.stamp(frag, VoltageSource(f"Vpmu{bus}.{p}", ref, None, value=volt[p][0]))
            self.term(frag, ("pmu_slack", bus, "V", p), (_v(core, p), _v(pmu, p)), "slack", f"IG.pmu{bus}.V.{p}")
        self.conductance(frag, core, pmu, g)

        for k, _ in rec.branch_currents:
            node = self.new_node(f"b{bus}.i{k}")
            self.attach[(bus, k)] = node
            self.conductance(frag, core, node, g)
            cur = self.values.rect(bus, k)
            for p in "ri":
                src, dst = self.circuit.ref(core, p), self.circuit.ref(node, p)
                if self.linear:
                    var_name = f"pmu{bus}.I{k}.{p}"
                    self.stamp(frag, VariableCurrentSource(src, dst, var_name))
                    self.term(frag, ("pmu", bus, k, p), (var_name,), "pmu_current", var_name)
                else:
                    self.stamp(frag, CurrentSource(src, dst, cur[p][0]))
                self.term(frag, ("pmu_slack", bus, k, p), (_v(node, p), _v(core, p)), "slack",
                          f"IG.pmu{bus}.I{k}.{p}")

        if rec.injection is not None:
            inj = self.values.rect(bus, "inj")
            for p in "ri":
                src = self.circuit.ref(core, p)
                if self.linear:
                    var_name = f"pmu{bus}.Iinj.{p}"
                    self.stamp(frag, VariableCurrentSource(src, None, var_name))
                    self.term(frag, ("pmu", bus, "inj", p), (var_name,), "pmu_current", var_name)
                else:
                    self.stamp(frag, CurrentSource(src, None, inj[p][0]))
        return frag

    def build_rtu_injection(self, rec):
        frag = ModelFragment()
        core = self.core[rec.bus]
        self.rtu_load(frag, core, core, rec.bus, "inj")
        return frag

    def build_unmonitored(self, bus):
        frag = ModelFragment()
        cr, ci = self.refs(self.core[bus])
        self.stamp(frag, VariableCurrentSource(cr, None, f"free{bus}.r"))
        self.stamp(frag, VariableCurrentSource(ci, None, f"free{bus}.i"))
        return frag

    def build_null_injection(self, bus):
        return ModelFragment()

    def _split_incident(self, bus):
        incident = list(self.case.incident_branches(bus))
        b = self.case.bus(bus)
        if b.g_shunt != 0.0 or b.b_shunt != 0.0:
            incident.append("sh")
        return incident

    def build_rtu_flows(self, rec):
        """Node-split flow model for an RTU without injection data."""
        frag = ModelFragment()
        bus = rec.bus
        core = self.core[bus]
        measured = [k for k, _ in rec.flows]
        nodes = {}
        for item in self._split_incident(bus):
            nodes[item] = core if item == measured[0] else self.new_node(f"b{bus}.L{item}")
            if item == "sh":
                self.shunt_node[bus] = nodes[item]
            else:
                self.attach[(bus, item)] = nodes[item]
        for k in measured:
            self.rtu_load(frag, nodes[k], core, bus, k)
        for item, node in nodes.items():
            if item in measured:
                continue
            for p in "ri":
                self.stamp(frag, ControlledVoltageSource(
                    f"cvs{bus}.{item}.{p}", self.circuit.ref(node, p), None, self.circuit.ref(core, p)))
        if len(measured) >= 2:
            aux = self.new_node(f"b{bus}.aux")
            for k in measured:
                for p in "ri":
                    name = f"aux{bus}.{k}.{p}"
                    self.stamp(frag, ControlledVoltageSource(
                        name, self.circuit.ref(aux, p), None, self.circuit.ref(nodes[k], p)))
                    self.term(frag, ("gauge",), (f"I({name})",), "gauge", name)
        return frag

    def build_rtu_injection_plus_flows(self, rec, null=False):
        """Ammeter-based model for flows at a bus whose injection is known
        (measured, or zero for a null-injection bus)."""
        frag = ModelFragment()
        bus = rec.bus
        core = self.core[bus]
        if not null:
            frag.extend(self.build_rtu_injection(rec))
        g = self.opt.g_flow
        for k, _ in rec.flows:
            line = self.new_node(f"b{bus}.L{k}")
            self.attach[(bus, k)] = line
            t = self.new_node(f"b{bus}.F{k}.t")
            s = self.new_node(f"b{bus}.F{k}.s")
            for p in "ri":
                amm = f"amm{bus}.{k}.{p}"
                self.stamp(frag, Ammeter(amm, self.circuit.ref(line, p), self.circuit.ref(core, p)))
                self.stamp(frag, ControlledVoltageSource(
                    f"cvsF{bus}.{k}.{p}", self.circuit.ref(s, p), None, self.circuit.ref(core, p)))
                self.stamp(frag, CurrentControlledCurrentSource(None, self.circuit.ref(t, p), 1.0, amm))
            self.conductance(frag, t, None, g)
            self.rtu_load(frag, t, s, bus, k)
            for p in "ri":
                self.term(frag, ("flow_slack", bus, k), (_v(t, p),), "slack", f"IG.flow{bus}.{k}.{p}")
        return frag

    # ---- assembly -----------------------------------------------------

    def injection_kind(self, bus):
        pmu = self.ms.pmu_at(bus)
        rtu = self.ms.rtu_at(bus)
        if pmu is not None and pmu.injection is not None:
            return "pmu"
        if self.case.bus(bus).is_null_injection:
            return "null"
        if rtu is not None and rtu.injection is not None:
            return "rtu"
        return "free"

    def build(self):
        for b in self.case.buses:
            bus = b.id
            pmu = self.ms.pmu_at(bus)
            rtu = self.ms.rtu_at(bus)
            inj = self.injection_kind(bus)
            frag = ModelFragment()
            kinds = []
            if pmu is not None:
                frag.extend(self.build_pmu(pmu))
                kinds.append("pmu")
            if rtu is not None and rtu.flows:
                if pmu is not None:
                    raise CircuitError(f"RTU flows at PMU bus {bus} are not supported")
                if inj in ("rtu", "null"):
                    frag.extend(self.build_rtu_injection_plus_flows(rtu, null=(inj == "null")))
                    kinds.append("injection+flows" if inj == "rtu" else "null+flows")
                else:
                    frag.extend(self.build_rtu_flows(rtu))
                    kinds.append("single-flow" if len(rtu.flows) == 1 else "multi-flow")
            elif inj == "rtu":
                frag.extend(self.build_rtu_injection(rtu))
                kinds.append("rtu-injection")
            elif inj == "null":
                frag.extend(self.build_null_injection(bus))
                kinds.append("null")
            elif inj == "free":
                frag.extend(self.build_unmonitored(bus))
                kinds.append("unmonitored")
            self.fragments[bus] = frag
            self.kinds[bus] = tuple(kinds)

        for k, br in enumerate(self.case.branches):
            a = self.attach.get((br.from_bus, k), self.core[br.from_bus])
            z = self.attach.get((br.to_bus, k), self.core[br.to_bus])
            stamp_branch(self.circuit, a, z, branch_pi_model(br))
        for b in self.case.buses:
            if b.g_shunt != 0.0 or b.b_shunt != 0.0:
                node = self.shunt_node.get(b.id, self.core[b.id])
                stamp_admittance(self.circuit, node, None, complex(b.g_shunt, b.b_shunt))


@dataclass
class EstimationModel:
    """Assembled estimation circuit plus objective and bounds."""

    case: object
    mode: str
    options: ModelOptions
    layout: tuple
    circuit: Circuit
    system: object
    terms: list
    bounds: list
    initial: dict
    core_nodes: tuple
    kinds: dict
    fragments: dict
    _objective: tuple = field(default=None, repr=False)
    _pattern: tuple = field(default=None, repr=False)

    @property
    def n_vars(self):
        return self.system.shape[1]

    def _term_pattern(self):
        if self._pattern is None:
            vm = self.system.var_map
            rows = np.array([i for i, t in enumerate(self.terms) for _ in t.coeffs], dtype=int)
            cols = np.array([vm[v] for t in self.terms for v, _ in t.coeffs], dtype=int)
            self._pattern = (rows, cols)
        return self._pattern

    def objective_matrices(self):
        """Sparse ``C``, target ``d`` and weights ``w`` of all terms."""
        if self._objective is None:
            rows, cols = self._term_pattern()
            vals = np.array([c for t in self.terms for _, c in t.coeffs])
            c = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.terms), self.n_vars))
            d = np.array([t.target for t in self.terms])
            w = np.array([t.weight for t in self.terms])
            self._objective = (c, d, w)
        return self._objective

    def objective(self, x):
        c, d, w = self.objective_matrices()
        r = c @ x - d
        return float(np.sum(w * r * r))

    def refresh(self, measurements):
        """Same circuit, objective numbers taken from ``measurements``.

        Only linear models can be refreshed (nonlinear models fix PMU
        values inside the circuit); the measurement layout must match.
        """
        if self.mode != LINEAR:
            raise ValueError("only linear models can be refreshed")
        if measurement_layout(measurements) != self.layout:
            raise ValueError("measurement layout differs from the model's")
        values = _Values(measurements, self.mode, self.options)
        terms = []
        for t in self.terms:
            coefs, target, weight = values(t.source)
            names = [v for v, _ in t.coeffs]
            terms.append(ObjectiveTerm(tuple(zip(names, coefs)), target, weight, t.kind, t.label, t.source))
        return replace(self, terms=terms, _objective=None)

    def voltage_columns(self):
        vm = self.system.var_map
        cr = np.array([vm[f"V({n}).r"] for n in self.core_nodes])
        ci = np.array([vm[f"V({n}).i"] for n in self.core_nodes])
        return cr, ci

    def state(self, x):
        cr, ci = self.voltage_columns()
        return x[cr].copy(), x[ci].copy()

    def bound_arrays(self):
        vm = self.system.var_map
        idx = np.array([vm[v] for v, _, _ in self.bounds], dtype=int)
        lo = np.array([lo for _, lo, _ in self.bounds], dtype=float)
        hi = np.array([hi for _, _, hi in self.bounds], dtype=float)
        return idx, lo, hi

    def initial_point(self):
        """Flat voltages, admittances at their interval midpoints."""
        x = np.zeros(self.n_vars)
        vm = self.system.var_map
        for name in self.circuit.nodes:
            x[vm[f"V({name}).r"]] = 1.0
        for var, val in self.initial.items():
            x[vm[var]] = val
        return x

    def consistent_point(self, v_real, v_imag, fixed=None):
        """Complete a bus voltage vector to a full circuit vector.

        Core voltages (and any ``fixed`` variables, defaulting to the
        admittance targets in nonlinear mode) are held; the rest is the
        least-squares solution of circuit equations plus zeroed objective
        residuals. Returns ``(x, circuit_residual, objective_residual)``.
        """
        n = self.n_vars
        x = np.zeros(n)
        cr, ci = self.voltage_columns()
        x[cr], x[ci] = v_real, v_imag
        hold = np.zeros(n, dtype=bool)
        hold[cr] = hold[ci] = True
        if fixed is None and self.mode == NONLINEAR:
            fixed = {t.coeffs[0][0]: t.target for t in self.terms if t.kind == "admittance"}
        for var, val in (fixed or {}).items():
            j = self.system.var_map[var]
            x[j] = val
            hold[j] = True
        free = np.flatnonzero(~hold)
        c, d, _ = self.objective_matrices()
        jac = self.system.jacobian(x)
        stacked = sp.vstack([jac, c]).tocsc()[:, free].toarray()
        r0 = np.r_[self.system.residual(x), c @ x - d]
        step, *_ = np.linalg.lstsq(stacked, -r0, rcond=None)
        x[free] += step
        return (x, float(np.max(np.abs(self.system.residual(x)), initial=0.0)),
                float(np.max(np.abs(c @ x - d), initial=0.0)))


def build_estimation_model(case, measurements, mode=LINEAR, options=None):
    """Build and assemble the estimation circuit for a measurement set."""
    options = options or ModelOptions()
    builder = _Builder(case, measurements, mode, options)
    builder.build()
    system = builder.circuit.assemble()
    terms, bounds = [], []
    for frag in builder.fragments.values():
        terms += frag.objective_terms
        bounds += frag.bound_specs
    for var, lo, hi in bounds:
        if lo > hi:
            raise ValueError(f"inconsistent bounds for {var}: {lo} > {hi}")
    return EstimationModel(
        case=case, mode=mode, options=options, layout=measurement_layout(measurements),
        circuit=builder.circuit, system=system, terms=terms, bounds=bounds,
        initial=builder.initial, core_nodes=tuple(builder.core[b.id] for b in case.buses),
        kinds=builder.kinds, fragments=builder.fragments,
    )
