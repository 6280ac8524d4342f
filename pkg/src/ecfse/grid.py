"""Grid data model, MATPOWER case parsing and branch pi-models.

All electrical quantities are stored in per-unit on the case MVA base.
Bus ids are the external (MATPOWER) bus numbers; branches are addressed by
their position in :attr:`NetworkCase.branches`.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BusKind",
    "Bus",
    "Branch",
    "NetworkCase",
    "PiModel",
    "CaseFormatError",
    "parse_matpower_case",
    "branch_pi_model",
    "load_case",
    "case_to_json",
    "case_from_json",
    "BUNDLED_CASES",
]

BUNDLED_CASES = {"ieee14": "case14.m", "ieee57": "case57.m", "ieee118": "case118.m"}


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case data."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_kv: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    v_set: float = 1.0

    @property
    def is_null_injection(self):
        """True when the bus has neither load nor generation."""
        return (self.p_load == 0.0 and self.q_load == 0.0
                and self.p_gen == 0.0 and self.q_gen == 0.0
                and self.kind is BusKind.PQ)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0


@dataclass(frozen=True)
class PiModel:
    """Pi-equivalent of a branch with an ideal off-nominal transformer at
    the from end (MATPOWER convention)."""

    y_series: complex
    y_shunt_from: complex
    y_shunt_to: complex
    tap: complex

    def admittance_matrix(self):
        """Return ``(y_ff, y_ft, y_tf, y_tt)`` of the two-port."""
        t = self.tap
        y_ff = (self.y_series + self.y_shunt_from) / (abs(t) ** 2)
        y_ft = -self.y_series / t.conjugate()
        y_tf = -self.y_series / t
        y_tt = self.y_series + self.y_shunt_to
        return y_ff, y_ft, y_tf, y_tt


def branch_pi_model(branch):
    if branch.r == 0.0 and branch.x == 0.0:
        raise CaseFormatError(f"zero-impedance branch {branch.from_bus}-{branch.to_bus}")
    y = 1.0 / complex(branch.r, branch.x)
    tap = branch.tap_ratio * complex(math.cos(branch.phase_shift), math.sin(branch.phase_shift))
    half = 0.5j * branch.b_charging
    return PiModel(y_series=y, y_shunt_from=half, y_shunt_to=half, tap=tap)


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple
    branches: tuple
    base_mva: float = 100.0
    name: str = ""
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        index = {}
        for pos, bus in enumerate(self.buses):
            if bus.id in index:
                raise CaseFormatError(f"duplicate bus id {bus.id}")
            index[bus.id] = pos
        object.__setattr__(self, "_index", index)
        slack = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if not slack:
            raise CaseFormatError("no slack bus")
        if len(slack) > 1:
            raise CaseFormatError(f"multiple slack buses: {slack}")
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in index:
                    raise CaseFormatError(f"branch {k} references undefined bus {end}")
            if br.from_bus == br.to_bus:
                raise CaseFormatError(f"branch {k} connects bus {br.from_bus} to itself")
            if br.r == 0.0 and br.x == 0.0:
                raise CaseFormatError(f"zero-impedance branch {k} ({br.from_bus}-{br.to_bus})")

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_branch(self):
        return len(self.branches)

    @property
    def slack_index(self):
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    def bus_index(self, bus_id):
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"unknown bus {bus_id}") from None

    def bus(self, bus_id):
        return self.buses[self.bus_index(bus_id)]

    def incident_branches(self, bus_id):
        """Branch indices touching ``bus_id``, in case order."""
        return [k for k, br in enumerate(self.branches) if bus_id in (br.from_bus, br.to_bus)]

    def branch_end(self, branch_index, bus_id):
        """Return ``'from'`` or ``'to'`` for the end of a branch at a bus."""
        br = self.branches[branch_index]
        if br.from_bus == bus_id:
            return "from"
        if br.to_bus == bus_id:
            return "to"
        raise ValueError(f"branch {branch_index} is not incident to bus {bus_id}")

    def is_connected(self):
        n = self.n_bus
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for br in self.branches:
            a, b = find(self.bus_index(br.from_bus)), find(self.bus_index(br.to_bus))
            parent[a] = b
        return len({find(i) for i in range(n)}) == 1

    def branch_arrays(self):
        """Vectorised branch data: from/to bus positions and the four
        two-port admittances."""
        nl = self.n_branch
        f = np.empty(nl, dtype=int)
        t = np.empty(nl, dtype=int)
        y = np.empty((nl, 4), dtype=complex)
        for k, br in enumerate(self.branches):
            f[k] = self.bus_index(br.from_bus)
            t[k] = self.bus_index(br.to_bus)
            y[k] = branch_pi_model(br).admittance_matrix()
        return f, t, y

    def admittance_matrices(self):
        """Return sparse ``(Ybus, Yf, Yt)`` like MATPOWER's makeYbus."""
        n, nl = self.n_bus, self.n_branch
        f, t, y = self.branch_arrays()
        rows = np.arange(nl)
        yf = sp.csr_matrix((np.r_[y[:, 0], y[:, 1]], (np.r_[rows, rows], np.r_[f, t])), shape=(nl, n))
        yt = sp.csr_matrix((np.r_[y[:, 2], y[:, 3]], (np.r_[rows, rows], np.r_[f, t])), shape=(nl, n))
        ysh = np.array([complex(b.g_shunt, b.b_shunt) for b in self.buses])
        cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, n))
        ct = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, n))
        ybus = (cf.T @ yf + ct.T @ yt + sp.diags(ysh)).tocsr()
        return ybus, yf, yt


# --------------------------------------------------------------------------
# MATPOWER parsing

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?:Inf|inf|NaN|nan)")

_BUS_COLS = 13
_GEN_COLS = 10
_BRANCH_COLS = 11


def _strip_comment(line):
    # '%' inside quoted strings is not a comment
    in_quote = False
    for i, ch in enumerate(line):
        if ch == "'":
            in_quote = not in_quote
        elif ch == "%" and not in_quote:
            return line[:i]
    return line


def _parse_matrix(lines, start, col, name):
    """Parse ``[ ... ];`` starting at ``lines[start]`` column ``col``.

    Returns (rows, next_line_index).
    """
    rows, current = [], []
    i = start
    text = lines[i][col:]
    offset = col
    assert text.startswith("[")
    text, offset = text[1:], offset + 1
    while True:
        pos = 0
        while pos < len(text):
            ch = text[pos]
            if ch in " \t,\r\n":
                pos += 1
            elif ch == ";":
                if current:
                    rows.append(current)
                    current = []
                pos += 1
            elif ch == "]":
                if current:
                    rows.append(current)
                return rows, i + 1
            elif ch == "." and text[pos:pos + 3] == "...":
                break
            else:
                m = _NUMBER.match(text, pos)
                if m is None:
                    raise CaseFormatError(f"invalid numeric literal in mpc.{name}",
                                          line=i + 1, column=offset + pos + 1)
                current.append(float(m.group()))
                pos = m.end()
        i += 1
        if i >= len(lines):
            raise CaseFormatError(f"unterminated matrix mpc.{name}", line=start + 1, column=col + 1)
        text = _strip_comment(lines[i])
        offset = 0


def _skip_block(lines, start, col, opener, closer):
    depth = 0
    i, text = start, lines[start][col:]
    while True:
        for ch in text:
            if ch == opener:
                depth += 1
            elif ch == closer:
                depth -= 1
                if depth == 0:
                    return i + 1
        i += 1
        if i >= len(lines):
            raise CaseFormatError("unterminated block", line=start + 1, column=col + 1)
        text = _strip_comment(lines[i])


def _read_sections(text):
    lines = text.splitlines()
    sections = {}
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _ASSIGN.search(raw)
        if m is None:
            i += 1
            continue
        name, col = m.group(1), m.end()
        rest = raw[col:].lstrip()
        col += len(raw[col:]) - len(rest)
        if rest.startswith("["):
            lines[i] = raw
            rows, i = _parse_matrix(lines, i, col, name)
            sections[name] = (rows, m.start())
        elif rest.startswith("{"):
            i = _skip_block(lines, i, col, "{", "}")
        else:
            value = rest.rstrip().rstrip(";").strip()
            if name == "baseMVA":
                nm = _NUMBER.fullmatch(value)
                if nm is None:
                    raise CaseFormatError("invalid baseMVA value", line=i + 1, column=col + 1)
                sections[name] = float(value)
            i += 1
    return sections


def _check_width(rows, width, name):
    for r, row in enumerate(rows):
        if len(row) < width:
            raise CaseFormatError(f"mpc.{name} row {r + 1} has {len(row)} columns, expected >= {width}")


def parse_matpower_case(text, name=""):
    """Parse the subset of a MATPOWER case file used here.

    Reads ``baseMVA``, ``bus``, ``gen`` and ``branch``; everything else
    (``gencost``, cell arrays, version strings) is skipped. Out-of-service
    branches and generators are dropped. Generator outputs are netted into
    ``Bus.p_gen``/``Bus.q_gen``; the voltage set point of the first
    in-service generator at a bus becomes ``Bus.v_set``.
    """
    sections = _read_sections(text)
    for required in ("baseMVA", "bus", "branch"):
        if required not in sections:
            raise CaseFormatError(f"missing mpc.{required}")
    base = sections["baseMVA"]
    if base <= 0:
        raise CaseFormatError("baseMVA must be positive")
    bus_rows, _ = sections["bus"]
    branch_rows, _ = sections["branch"]
    gen_rows = sections.get("gen", ([], 0))[0]
    _check_width(bus_rows, _BUS_COLS - 2, "bus")
    _check_width(branch_rows, _BRANCH_COLS, "branch")
    _check_width(gen_rows, _GEN_COLS - 2, "gen")

    kinds = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
    gen_p, gen_q, vset = {}, {}, {}
    for row in gen_rows:
        bus_id, status = int(row[0]), row[7]
        if status <= 0:
            continue
        gen_p[bus_id] = gen_p.get(bus_id, 0.0) + row[1] / base
        gen_q[bus_id] = gen_q.get(bus_id, 0.0) + row[2] / base
        vset.setdefault(bus_id, row[5])

    buses = []
    for r, row in enumerate(bus_rows):
        bus_id, code = int(row[0]), int(row[1])
        if code == 4:
            continue  # isolated
        if code not in kinds:
            raise CaseFormatError(f"bus {bus_id}: unknown bus type {code}")
        kind = kinds[code]
        if kind is not BusKind.PQ and bus_id not in gen_p:
            kind = BusKind.PQ if kind is BusKind.PV else kind
        buses.append(Bus(
            id=bus_id, kind=kind,
            base_kv=row[9] if len(row) > 9 else 0.0,
            p_load=row[2] / base, q_load=row[3] / base,
            g_shunt=row[4] / base, b_shunt=row[5] / base,
            p_gen=gen_p.get(bus_id, 0.0), q_gen=gen_q.get(bus_id, 0.0),
            v_set=vset.get(bus_id, row[7]),
        ))
    known = {b.id for b in buses}
    for bus_id in gen_p:
        if bus_id not in known:
            raise CaseFormatError(f"generator references undefined bus {bus_id}")

    branches = []
    for r, row in enumerate(branch_rows):
        if row[10] <= 0:
            continue
        f, t = int(row[0]), int(row[1])
        for end in (f, t):
            if end not in known:
                raise CaseFormatError(f"branch row {r + 1} references undefined bus {end}")
        if row[2] == 0.0 and row[3] == 0.0:
            raise CaseFormatError(f"zero-impedance branch row {r + 1} ({f}-{t})")
        ratio = row[8] if row[8] != 0.0 else 1.0
        branches.append(Branch(f, t, r=row[2], x=row[3], b_charging=row[4],
                               tap_ratio=ratio, phase_shift=math.radians(row[9])))
    return NetworkCase(buses=buses, branches=branches, base_mva=base, name=name)


# --------------------------------------------------------------------------
# native JSON format

def case_to_json(case):
    doc = {
        "format": "ecfse-case/1",
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [{**asdict(b), "kind": b.kind.value} for b in case.buses],
        "branches": [asdict(br) for br in case.branches],
    }
    return json.dumps(doc, indent=1)


def case_from_json(text):
    doc = json.loads(text)
    if doc.get("format") != "ecfse-case/1":
        raise CaseFormatError(f"unsupported case format {doc.get('format')!r}")
    buses = [Bus(**{**b, "kind": BusKind(b["kind"])}) for b in doc["buses"]]
    branches = [Branch(**br) for br in doc["branches"]]
    return NetworkCase(buses=buses, branches=branches, base_mva=doc["base_mva"], name=doc.get("name", ""))


def load_case(spec):
    """Load a case by bundled name (``ieee14``), ``.m`` path or ``.json`` path."""
    spec = str(spec)
    if spec in BUNDLED_CASES:
        text = resources.files("ecfse.data.cases").joinpath(BUNDLED_CASES[spec]).read_text()
        return parse_matpower_case(text, name=spec)
    path = Path(spec)
    text = path.read_text()
    if path.suffix == ".json":
        return case_from_json(text)
    return parse_matpower_case(text, name=path.stem)
