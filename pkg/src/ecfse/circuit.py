"""Split real/imaginary equivalent circuit and its modified nodal analysis.

Every named node exists twice, once per plane. Currents leaving a node are
positive in its KCL row; a current source described by ``(frm, to)``
drives its current out of ``frm`` and into ``to``. ``None`` is ground.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "Plane", "NodeRef", "Conductance", "ControlledCurrentSource", "CurrentSource",
    "VariableCurrentSource", "VoltageSource", "ControlledVoltageSource", "Ammeter",
    "CurrentControlledCurrentSource", "BilinearLoad", "Circuit", "MnaSystem",
    "CircuitError", "stamp_admittance", "stamp_transfer", "stamp_branch",
]


class CircuitError(ValueError):
    pass


class Plane(str, enum.Enum):
    REAL = "r"
    IMAG = "i"

    @property
    def other(self):
        return Plane.IMAG if self is Plane.REAL else Plane.REAL


@dataclass(frozen=True)
class NodeRef:
    index: int
    plane: Plane


@dataclass(frozen=True)
class Conductance:
    a: NodeRef | None
    b: NodeRef | None
    g: float


@dataclass(frozen=True)
class ControlledCurrentSource:
    """Current ``gain * (V[ctrl_p] - V[ctrl_n])`` driven from ``frm`` to ``to``.

    With the controlling nodes in the other plane this is the coupling
    element between the two sub-circuits.
    """

    frm: NodeRef | None
    to: NodeRef | None
    gain: float
    ctrl_p: NodeRef | None
    ctrl_n: NodeRef | None = None


@dataclass(frozen=True)
class CurrentSource:
    frm: NodeRef | None
    to: NodeRef | None
    value: float


@dataclass(frozen=True)
class VariableCurrentSource:
    frm: NodeRef | None
    to: NodeRef | None
    var: str


@dataclass(frozen=True)
class VoltageSource:
    """``V[pos] - V[neg] = value``, or ``= x[var]`` when ``var`` is set."""

    name: str
    pos: NodeRef | None
    neg: NodeRef | None
    value: float = 0.0
    var: str | None = None


@dataclass(frozen=True)
class ControlledVoltageSource:
    """``V[pos] - V[neg] = gain * (V[ctrl_p] - V[ctrl_n])``."""

    name: str
    pos: NodeRef | None
    neg: NodeRef | None
    ctrl_p: NodeRef | None
    ctrl_n: NodeRef | None = None
    gain: float = 1.0


@dataclass(frozen=True)
class Ammeter:
    """Zero-volt source; its current (``a`` to ``b``) is a named variable."""

    name: str
    a: NodeRef | None
    b: NodeRef | None


@dataclass(frozen=True)
class CurrentControlledCurrentSource:
    frm: NodeRef | None
    to: NodeRef | None
    gain: float
    ammeter: str


@dataclass(frozen=True)
class BilinearLoad:
    """Variable admittance load ``(g + j b)`` seen from load convention.

    Withdraws ``g*Vr + b*Vi`` from ``node_r`` and ``g*Vi - b*Vr`` from
    ``node_i`` where ``(Vr, Vi)`` are the controlling node voltages.
    ``g`` and ``b`` are decision variables.
    """

    node_r: NodeRef
    node_i: NodeRef
    ctrl_r: NodeRef
    ctrl_i: NodeRef
    g_var: str
    b_var: str


_BRANCH_ELEMENTS = (VoltageSource, ControlledVoltageSource, Ammeter)


def _vname(circuit, ref):
    return f"V({circuit.nodes[ref.index]}).{ref.plane.value}"


@dataclass
class Circuit:
    nodes: list = field(default_factory=list)
    elements: list = field(default_factory=list)
    variables: list = field(default_factory=list)
    _node_index: dict = field(default_factory=dict, repr=False)
    _names: set = field(default_factory=set, repr=False)

    def add_node(self, name):
        if name in self._node_index:
            raise CircuitError(f"duplicate node {name!r}")
        self._node_index[name] = len(self.nodes)
        self.nodes.append(name)
        return len(self.nodes) - 1

    def node(self, name):
        return self._node_index[name]

    def has_node(self, name):
        return name in self._node_index

    def ref(self, name, plane):
        return NodeRef(self._node_index[name], Plane(plane))

    def pair(self, name):
        idx = self._node_index[name]
        return NodeRef(idx, Plane.REAL), NodeRef(idx, Plane.IMAG)

    def add_variable(self, var):
        if var in self._names:
            raise CircuitError(f"duplicate variable id {var!r}")
        self._names.add(var)
        self.variables.append(var)

    def stamp_element(self, element):
        for ref in _refs(element):
            if ref is not None and not 0 <= ref.index < len(self.nodes):
                raise CircuitError(f"{type(element).__name__} references unknown node {ref.index}")
        if isinstance(element, _BRANCH_ELEMENTS):
            if element.name in self._names:
                raise CircuitError(f"duplicate variable id {element.name!r}")
            self._names.add(element.name)
        if isinstance(element, VariableCurrentSource):
            self.add_variable(element.var)
        elif isinstance(element, VoltageSource) and element.var is not None:
            self.add_variable(element.var)
        elif isinstance(element, BilinearLoad):
            self.add_variable(element.g_var)
            self.add_variable(element.b_var)
        elif isinstance(element, CurrentControlledCurrentSource):
            if element.ammeter not in self._names:
                raise CircuitError(f"unknown ammeter {element.ammeter!r}")
        self.elements.append(element)

    def assemble(self):
        return _assemble(self)

    def netlist(self):
        """Text dump, one element per line, for fixture diffing."""
        def n(ref):
            return "0" if ref is None else f"{self.nodes[ref.index]}.{ref.plane.value}"

        lines = []
        for el in self.elements:
            kind = type(el).__name__
            if isinstance(el, Conductance):
                lines.append(f"G {n(el.a)} {n(el.b)} {el.g!r}")
            elif isinstance(el, ControlledCurrentSource):
                lines.append(f"VCCS {n(el.frm)} {n(el.to)} {el.gain!r} {n(el.ctrl_p)} {n(el.ctrl_n)}")
            elif isinstance(el, CurrentSource):
                lines.append(f"I {n(el.frm)} {n(el.to)} {el.value!r}")
            elif isinstance(el, VariableCurrentSource):
                lines.append(f"IVAR {n(el.frm)} {n(el.to)} {el.var}")
            elif isinstance(el, VoltageSource):
                val = el.var if el.var is not None else repr(el.value)
                lines.append(f"V {el.name} {n(el.pos)} {n(el.neg)} {val}")
            elif isinstance(el, ControlledVoltageSource):
                lines.append(f"VCVS {el.name} {n(el.pos)} {n(el.neg)} {el.gain!r} {n(el.ctrl_p)} {n(el.ctrl_n)}")
            elif isinstance(el, Ammeter):
                lines.append(f"AMM {el.name} {n(el.a)} {n(el.b)}")
            elif isinstance(el, CurrentControlledCurrentSource):
                lines.append(f"CCCS {n(el.frm)} {n(el.to)} {el.gain!r} {el.ammeter}")
            elif isinstance(el, BilinearLoad):
                lines.append(f"YVAR {n(el.node_r)} {n(el.node_i)} {n(el.ctrl_r)} {n(el.ctrl_i)} "
                             f"{el.g_var} {el.b_var}")
            else:  # pragma: no cover
                raise CircuitError(f"unknown element {kind}")
        return "\n".join(lines) + "\n"


def _refs(el):
    if isinstance(el, Conductance):
        return (el.a, el.b)
    if isinstance(el, ControlledCurrentSource):
        return (el.frm, el.to, el.ctrl_p, el.ctrl_n)
    if isinstance(el, (CurrentSource, VariableCurrentSource, CurrentControlledCurrentSource)):
        return (el.frm, el.to)
    if isinstance(el, VoltageSource):
        return (el.pos, el.neg)
    if isinstance(el, ControlledVoltageSource):
        return (el.pos, el.neg, el.ctrl_p, el.ctrl_n)
    if isinstance(el, Ammeter):
        return (el.a, el.b)
    if isinstance(el, BilinearLoad):
        return (el.node_r, el.node_i, el.ctrl_r, el.ctrl_i)
    raise CircuitError(f"unknown element {type(el).__name__}")


@dataclass(frozen=True)
class MnaSystem:
    """Linear part ``A x = b`` plus bilinear admittance terms.

    The residual of the circuit equations is
    ``A x - b + bilinear(x)``; with no :class:`BilinearLoad` elements the
    system is linear.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    var_map: dict
    row_names: tuple
    free_vars: tuple
    bilinear: np.ndarray  # rows: (row_r, row_i, col_cr, col_ci, col_g, col_b)

    @property
    def shape(self):
        return self.matrix.shape

    def column(self, name):
        return self.var_map[name]

    def residual(self, x):
        r = self.matrix @ x - self.rhs
        if len(self.bilinear):
            rr, ri, cr, ci, cg, cb = self.bilinear.T
            g, b, vr, vi = x[cg], x[cb], x[cr], x[ci]
            np.add.at(r, rr, g * vr + b * vi)
            np.add.at(r, ri, g * vi - b * vr)
        return r

    def jacobian(self, x):
        if not len(self.bilinear):
            return self.matrix
        rr, ri, cr, ci, cg, cb = self.bilinear.T
        g, b, vr, vi = x[cg], x[cb], x[cr], x[ci]
        rows = np.r_[rr, rr, rr, rr, ri, ri, ri, ri]
        cols = np.r_[cg, cr, cb, ci, cg, ci, cb, cr]
        vals = np.r_[vr, g, vi, b, vi, g, -vr, -b]
        extra = sp.csr_matrix((vals, (rows, cols)), shape=self.matrix.shape)
        return (self.matrix + extra).tocsr()

    def constraint_hessian(self, lam):
        """Hessian of ``lam . residual(x)`` (only bilinear terms contribute)."""
        n = self.matrix.shape[1]
        if not len(self.bilinear):
            return sp.csr_matrix((n, n))
        rr, ri, cr, ci, cg, cb = self.bilinear.T
        lr, li = lam[rr], lam[ri]
        rows = np.r_[cg, cb, cg, cb]
        cols = np.r_[cr, ci, ci, cr]
        vals = np.r_[lr, lr, li, -li]
        h = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return (h + h.T).tocsr()

    def solve(self):
        """Solve a square, linear system (all free variables removed)."""
        if self.free_vars or len(self.bilinear):
            raise CircuitError("system has free variables; use an estimator")
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise CircuitError(f"non-square system {self.matrix.shape}")
        try:
            return splu(self.matrix.tocsc()).solve(self.rhs)
        except RuntimeError as exc:
            raise CircuitError(f"singular circuit matrix: {exc}") from exc


def _assemble(circuit):
    var_map = {}
    for idx, name in enumerate(circuit.nodes):
        var_map[f"V({name}).r"] = 2 * idx
        var_map[f"V({name}).i"] = 2 * idx + 1
    n_nodes = 2 * len(circuit.nodes)
    row_names = [f"KCL({name}).{p}" for name in circuit.nodes for p in "ri"]
    branch_rows = {}
    for el in circuit.elements:
        if isinstance(el, _BRANCH_ELEMENTS):
            var_map[f"I({el.name})"] = len(var_map)
            branch_rows[el.name] = len(row_names)
            row_names.append(f"BR({el.name})")
    for var in circuit.variables:
        var_map[var] = len(var_map)

    def vcol(ref):
        return 2 * ref.index + (ref.plane is Plane.IMAG)

    rows, cols, vals = [], [], []
    rhs = np.zeros(len(row_names))
    bilinear = []

    def add(ref_row, col, val):
        if ref_row is not None:
            rows.append(vcol(ref_row))
            cols.append(col)
            vals.append(val)

    def add_diff(row, p, n, gain):
        if p is not None:
            rows.append(row); cols.append(vcol(p)); vals.append(gain)
        if n is not None:
            rows.append(row); cols.append(vcol(n)); vals.append(-gain)

    for el in circuit.elements:
        if isinstance(el, Conductance):
            for r, sign in ((el.a, 1.0), (el.b, -1.0)):
                if r is None:
                    continue
                add_diff(vcol(r), el.a, el.b, sign * el.g)
        elif isinstance(el, ControlledCurrentSource):
            for r, sign in ((el.frm, 1.0), (el.to, -1.0)):
                if r is None:
                    continue
                add_diff(vcol(r), el.ctrl_p, el.ctrl_n, sign * el.gain)
        elif isinstance(el, CurrentSource):
            if el.frm is not None:
                rhs[vcol(el.frm)] -= el.value
            if el.to is not None:
                rhs[vcol(el.to)] += el.value
        elif isinstance(el, VariableCurrentSource):
            col = var_map[el.var]
            add(el.frm, col, 1.0)
            add(el.to, col, -1.0)
        elif isinstance(el, (VoltageSource, ControlledVoltageSource, Ammeter)):
            col = var_map[f"I({el.name})"]
            pos, neg = (el.a, el.b) if isinstance(el, Ammeter) else (el.pos, el.neg)
            add(pos, col, 1.0)
            add(neg, col, -1.0)
            row = branch_rows[el.name]
            add_diff(row, pos, neg, 1.0)
            if isinstance(el, VoltageSource):
                if el.var is None:
                    rhs[row] = el.value
                else:
                    rows.append(row); cols.append(var_map[el.var]); vals.append(-1.0)
            elif isinstance(el, ControlledVoltageSource):
                add_diff(row, el.ctrl_p, el.ctrl_n, -el.gain)
        elif isinstance(el, CurrentControlledCurrentSource):
            col = var_map[f"I({el.ammeter})"]
            add(el.frm, col, el.gain)
            add(el.to, col, -el.gain)
        elif isinstance(el, BilinearLoad):
            bilinear.append((vcol(el.node_r), vcol(el.node_i), vcol(el.ctrl_r), vcol(el.ctrl_i),
                             var_map[el.g_var], var_map[el.b_var]))

    shape = (len(row_names), len(var_map))
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    matrix.sum_duplicates()

    # a node row with no linear and no bilinear entries is floating
    kcl_rows = np.asarray(rows, dtype=int)
    kcl_touched = np.zeros(n_nodes, dtype=bool)
    kcl_touched[kcl_rows[kcl_rows < n_nodes]] = True
    for b in bilinear:
        kcl_touched[b[0]] = kcl_touched[b[1]] = True
    floating = np.flatnonzero(~kcl_touched)
    if len(floating):
        name = circuit.nodes[floating[0] // 2]
        raise CircuitError(f"floating node {name!r} ({row_names[floating[0]]})")

    return MnaSystem(
        matrix=matrix,
        rhs=rhs,
        var_map=var_map,
        row_names=tuple(row_names),
        free_vars=tuple(circuit.variables),
        bilinear=np.array(bilinear, dtype=int).reshape(-1, 6),
    )


# --------------------------------------------------------------------------
# complex-to-split stamps

def _pair(circuit, node):
    if node is None:
        return None, None
    if isinstance(node, str):
        node = circuit.node(node)
    return NodeRef(node, Plane.REAL), NodeRef(node, Plane.IMAG)


def stamp_admittance(circuit, a, b, y):
    """Stamp complex admittance ``y`` between nodes ``a`` and ``b``.

    The current from a to b is ``y (V_a - V_b)``; the real plane carries
    ``g dV_R - b dV_I`` and the imaginary plane ``b dV_R + g dV_I``.
    """
    y = complex(y)
    ar, ai = _pair(circuit, a)
    br, bi = _pair(circuit, b)
    if y.real != 0.0:
        circuit.stamp_element(Conductance(ar, br, y.real))
        circuit.stamp_element(Conductance(ai, bi, y.real))
    if y.imag != 0.0:
        circuit.stamp_element(ControlledCurrentSource(ar, br, -y.imag, ai, bi))
        circuit.stamp_element(ControlledCurrentSource(ai, bi, y.imag, ar, br))


def stamp_transfer(circuit, out, ctrl, y):
    """Current ``y * V_ctrl`` leaving node ``out`` to ground."""
    y = complex(y)
    orr, oi = _pair(circuit, out)
    cr, ci = _pair(circuit, ctrl)
    if y.real != 0.0:
        circuit.stamp_element(ControlledCurrentSource(orr, None, y.real, cr))
        circuit.stamp_element(ControlledCurrentSource(oi, None, y.real, ci))
    if y.imag != 0.0:
        circuit.stamp_element(ControlledCurrentSource(orr, None, -y.imag, ci))
        circuit.stamp_element(ControlledCurrentSource(oi, None, y.imag, cr))


def stamp_branch(circuit, from_node, to_node, pi):
    """Stamp a branch pi-model between two circuit nodes.

    Reciprocal branches become a series admittance plus two shunts; a phase
    shifter additionally gets a pair of antisymmetric transfer sources.
    """
    y_ff, y_ft, y_tf, y_tt = pi.admittance_matrix()
    mutual = 0.5 * (y_ft + y_tf)
    stamp_admittance(circuit, from_node, to_node, -mutual)
    shunt_f = y_ff + mutual
    shunt_t = y_tt + mutual
    if abs(shunt_f) > 0.0:
        stamp_admittance(circuit, from_node, None, shunt_f)
    if abs(shunt_t) > 0.0:
        stamp_admittance(circuit, to_node, None, shunt_t)
    skew = 0.5 * (y_ft - y_tf)
    if abs(skew) > 0.0:
        stamp_transfer(circuit, from_node, to_node, skew)
        stamp_transfer(circuit, to_node, from_node, -skew)
