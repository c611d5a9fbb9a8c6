"""Case-file ingestion, start points, and solution documents.

Only the MATPOWER subset needed for ACOPF is accepted: ``baseMVA``, ``bus``,
``gen``, ``branch`` and ``gencost`` with polynomial costs of degree <= 2.
Everything is converted to per-unit on ``baseMVA`` while parsing.

Start-point files are JSON.  Three layouts are accepted:

* a single record ``{"theta": [...], "v": [...]}`` (a solution document
  produced by :func:`write_solution` is such a record),
* ``{"starts": [record, ...]}``,
* JSON Lines, one record per non-blank line.

A record may also carry ``"bus"`` (bus ids, must match the case order),
``"p_gen"`` and ``"q_gen"``.  Angles are radians.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np


class CaseFormatError(ValueError):
    """Raised when a case file cannot be parsed."""


class UnsupportedFeatureError(CaseFormatError):
    """Raised for MATPOWER features outside the supported subset."""


class StartPointError(ValueError):
    """Raised for malformed or mismatched start-point records."""


@dataclass(frozen=True)
class Bus:
    id: int
    is_reference: bool
    p_load: float
    q_load: float
    v_min: float
    v_max: float
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_g: float
    series_b: float
    charging_b: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    s_max: float = 0.0
    # raw impedance kept so that serialization round-trips exactly
    r: float | None = None
    x: float | None = None


@dataclass(frozen=True)
class CostFunction:
    generator: int
    constant: float = 0.0
    linear: float = 0.0
    quadratic: float = 0.0


@dataclass(frozen=True)
class CaseData:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    costs: tuple[CostFunction, ...]
    name: str = "case"

    def __post_init__(self):
        if not self.base_mva > 0:
            raise CaseFormatError("base_mva must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseFormatError("duplicate bus ids")
        known = set(ids)
        refs = [b for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise CaseFormatError(f"expected exactly one reference bus, found {len(refs)}")
        for b in self.buses:
            if not 0 < b.v_min <= b.v_max:
                raise CaseFormatError(f"bus {b.id}: voltage bounds must satisfy 0 < v_min <= v_max")
        for k, g in enumerate(self.generators):
            if g.bus not in known:
                raise CaseFormatError(f"generator {k} references unknown bus {g.bus}")
            if g.p_min > g.p_max or g.q_min > g.q_max:
                raise CaseFormatError(f"generator {k}: lower bound exceeds upper bound")
        for k, br in enumerate(self.branches):
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseFormatError(f"branch {k} references an unknown bus")
            if br.from_bus == br.to_bus:
                raise CaseFormatError(f"branch {k} connects bus {br.from_bus} to itself")
            if not br.tap_ratio > 0:
                raise CaseFormatError(f"branch {k}: tap ratio must be positive")
        if len(self.costs) != len(self.generators):
            raise CaseFormatError("need exactly one cost function per generator")
        for c in self.costs:
            if c.quadratic < 0:
                raise CaseFormatError(f"generator {c.generator}: negative quadratic cost")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def reference_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.is_reference)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}


@dataclass(frozen=True)
class StartPoint:
    theta: np.ndarray
    v: np.ndarray
    p_gen: np.ndarray | None = None
    q_gen: np.ndarray | None = None

    def as_tuple(self):
        return self.theta, self.v


# --------------------------------------------------------------------------
# MATPOWER parsing

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n%]+)")


def _strip_comment(line: str) -> str:
    # no string literals inside numeric tables, so '%' always starts a comment
    return line.split("%", 1)[0]


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _read_matrix(text: str, name: str, min_cols: int) -> tuple[list[list[float]], list[int]]:
    for m in _MATRIX_RE.finditer(text):
        if m.group(1) != name:
            continue
        body_start = m.start(2)
        rows, lines = [], []
        offset = body_start
        for raw_line in m.group(2).split("\n"):
            line_no = _line_of(text, offset)
            offset += len(raw_line) + 1
            for chunk in _strip_comment(raw_line).split(";"):
                tokens = chunk.replace(",", " ").split()
                if not tokens:
                    continue
                row = []
                for col, tok in enumerate(tokens, start=1):
                    try:
                        row.append(float(tok))
                    except ValueError:
                        raise CaseFormatError(
                            f"line {line_no}: non-numeric field {col} ({tok!r}) in mpc.{name}"
                        ) from None
                if len(row) < min_cols:
                    raise CaseFormatError(
                        f"line {line_no}: mpc.{name} row has {len(row)} fields, need at least {min_cols}"
                    )
                rows.append(row)
                lines.append(line_no)
        return rows, lines
    raise CaseFormatError(f"missing table mpc.{name}")


def parse_case(text: str, name: str = "case") -> CaseData:
    """Parse MATPOWER case text into a per-unit :class:`CaseData`."""
    m = _SCALAR_RE.search(text)
    if m is None:
        raise CaseFormatError("missing mpc.baseMVA")
    try:
        base = float(m.group(1).strip())
    except ValueError:
        raise CaseFormatError(
            f"line {_line_of(text, m.start())}: non-numeric field baseMVA ({m.group(1).strip()!r})"
        ) from None

    bus_rows, bus_lines = _read_matrix(text, "bus", 13)
    gen_rows, gen_lines = _read_matrix(text, "gen", 10)
    br_rows, br_lines = _read_matrix(text, "branch", 11)
    cost_rows, cost_lines = _read_matrix(text, "gencost", 4)

    buses = []
    for row, ln in zip(bus_rows, bus_lines):
        bus_type = int(row[1])
        if bus_type == 4:
            raise UnsupportedFeatureError(f"line {ln}: isolated buses (type 4) are not supported")
        buses.append(
            Bus(
                id=int(row[0]),
                is_reference=bus_type == 3,
                p_load=row[2] / base,
                q_load=row[3] / base,
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
                v_max=row[11],
                v_min=row[12],
            )
        )
    if not any(b.is_reference for b in buses):
        raise CaseFormatError(f"line {bus_lines[0] if bus_lines else 0}: field type: no reference bus (type 3)")

    if len(cost_rows) < len(gen_rows):
        raise CaseFormatError("mpc.gencost has fewer rows than mpc.gen")
    generators, costs = [], []
    for k, (row, ln) in enumerate(zip(gen_rows, gen_lines)):
        crow, cln = cost_rows[k], cost_lines[k]
        if row[7] <= 0:
            continue  # out of service
        model = int(crow[0])
        if model == 1:
            raise UnsupportedFeatureError(f"line {cln}: piecewise-linear gencost (model 1) is not supported")
        if model != 2:
            raise CaseFormatError(f"line {cln}: field model: unknown gencost model {model}")
        ncost = int(crow[3])
        coeffs = crow[4 : 4 + ncost]
        if len(coeffs) != ncost:
            raise CaseFormatError(f"line {cln}: field n: declares {ncost} coefficients, found {len(coeffs)}")
        if ncost > 3:
            raise UnsupportedFeatureError(f"line {cln}: polynomial cost of degree {ncost - 1} > 2")
        c = [0.0, 0.0, 0.0]  # constant, linear, quadratic
        for power, value in enumerate(reversed(coeffs)):
            c[power] = value
        gen_index = len(generators)
        generators.append(
            Generator(
                bus=int(row[0]),
                q_max=row[3] / base,
                q_min=row[4] / base,
                p_max=row[8] / base,
                p_min=row[9] / base,
            )
        )
        costs.append(CostFunction(gen_index, constant=c[0], linear=c[1] * base, quadratic=c[2] * base * base))

    branches = []
    for row, ln in zip(br_rows, br_lines):
        if row[10] <= 0:
            continue
        r, x = row[2], row[3]
        z2 = r * r + x * x
        if z2 == 0.0:
            raise CaseFormatError(f"line {ln}: field r/x: zero-impedance branch {int(row[0])}-{int(row[1])}")
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                series_g=r / z2,
                series_b=x / z2,
                charging_b=row[4],
                s_max=row[5] / base,
                tap_ratio=row[8] if row[8] != 0 else 1.0,
                phase_shift=math.radians(row[9]),
                r=r,
                x=x,
            )
        )
    return CaseData(base, tuple(buses), tuple(generators), tuple(branches), tuple(costs), name=name)


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_case(case: CaseData) -> str:
    """Write ``case`` back as MATPOWER text (inverse of :func:`parse_case`)."""
    base = case.base_mva
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "mpc.bus = ["]
    for b in case.buses:
        vals = [b.id, 3 if b.is_reference else 1, b.p_load * base, b.q_load * base, b.shunt_g * base,
                b.shunt_b * base, 1, 1, 0, 0, 1, b.v_max, b.v_min]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "mpc.gen = ["]
    for g in case.generators:
        vals = [g.bus, 0, 0, g.q_max * base, g.q_min * base, 1, base, 1, g.p_max * base, g.p_min * base]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "mpc.branch = ["]
    for br in case.branches:
        if br.r is not None and br.x is not None:
            r, x = br.r, br.x
        else:
            y2 = br.series_g**2 + br.series_b**2
            r, x = br.series_g / y2, br.series_b / y2
        vals = [br.from_bus, br.to_bus, r, x, br.charging_b, br.s_max * base, 0, 0,
                br.tap_ratio, math.degrees(br.phase_shift), 1, -360, 360]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "mpc.gencost = ["]
    for c in case.costs:
        vals = [2, 0, 0, 3, c.quadratic / (base * base), c.linear / base, c.constant]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out.append("];")
    return "\n".join(out) + "\n"


BUNDLED_CASES = ("case9", "case39", "twobus")


def bundled_case_text(name: str) -> str:
    stem = name[:-2] if name.endswith(".m") else name
    if stem not in BUNDLED_CASES:
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return resources.files("acopf_escape.data").joinpath(f"{stem}.m").read_text()


def load_case(path: str | Path) -> CaseData:
    """Read a case from ``path``; bare names of bundled fixtures also work."""
    p = Path(path)
    if p.is_file():
        return parse_case(p.read_text(), name=p.stem)
    stem = p.name[:-2] if p.name.endswith(".m") else p.name
    if str(p.parent) in ("", ".") and stem in BUNDLED_CASES:
        return parse_case(bundled_case_text(stem), name=stem)
    raise FileNotFoundError(f"case file not found: {path}")


def paper_model(case: CaseData) -> CaseData:
    """Strip taps, phase shifters and bus shunts (plain pi-model lines only)."""
    buses = tuple(replace(b, shunt_g=0.0, shunt_b=0.0) for b in case.buses)
    branches = tuple(replace(br, tap_ratio=1.0, phase_shift=0.0) for br in case.branches)
    return replace(case, buses=buses, branches=branches)


# --------------------------------------------------------------------------
# start points and solution documents

def flat_start(case: CaseData) -> StartPoint:
    return StartPoint(theta=np.zeros(case.n_bus), v=np.ones(case.n_bus))


def _normalized(case: CaseData | None, theta, v, p_gen=None, q_gen=None, bus_ids=None) -> StartPoint:
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    if theta.ndim != 1 or theta.shape != v.shape:
        raise StartPointError(f"theta and v must be vectors of equal length, got {theta.shape} and {v.shape}")
    ref = 0
    if case is not None:
        if theta.size != case.n_bus:
            raise StartPointError(f"start has {theta.size} buses, case has {case.n_bus}")
        if bus_ids is not None and [int(b) for b in bus_ids] != [b.id for b in case.buses]:
            raise StartPointError("start-point bus ids do not match the case")
        ref = case.reference_index
        for name, arr in (("p_gen", p_gen), ("q_gen", q_gen)):
            if arr is not None and len(arr) != case.n_gen:
                raise StartPointError(f"{name} has {len(arr)} entries, case has {case.n_gen} generators")
    theta = theta - theta[ref]
    return StartPoint(
        theta=theta,
        v=v,
        p_gen=None if p_gen is None else np.asarray(p_gen, dtype=float),
        q_gen=None if q_gen is None else np.asarray(q_gen, dtype=float),
    )


def load_start_points(text: str, case: CaseData | None = None) -> list[StartPoint]:
    """Parse start points; the reference angle is rotated to exactly zero.

    Without ``case`` the first bus is taken as reference and no dimension
    checks against a network are possible.
    """
    text = text.strip()
    if not text:
        return []
    try:
        doc = json.loads(text)
        records = doc["starts"] if isinstance(doc, dict) and "starts" in doc else doc
    except json.JSONDecodeError:
        try:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise StartPointError(f"start-point file is not JSON or JSON Lines: {exc}") from None
    if isinstance(records, dict):
        records = [records]
    starts = []
    for k, rec in enumerate(records):
        try:
            starts.append(
                _normalized(case, rec["theta"], rec["v"], rec.get("p_gen"), rec.get("q_gen"), rec.get("bus"))
            )
        except KeyError as exc:
            raise StartPointError(f"record {k}: missing field {exc}") from None
    return starts


def dump_start_points(starts, case: CaseData | None = None) -> str:
    """Inverse of :func:`load_start_points` (``{"starts": [...]}`` layout)."""
    recs = []
    for s in starts:
        rec = {"theta": [float(t) for t in s.theta], "v": [float(x) for x in s.v]}
        if case is not None:
            rec["bus"] = [b.id for b in case.buses]
        if s.p_gen is not None:
            rec["p_gen"] = [float(x) for x in s.p_gen]
        if s.q_gen is not None:
            rec["q_gen"] = [float(x) for x in s.q_gen]
        recs.append(rec)
    return json.dumps({"starts": recs}, indent=1)


def solution_record(solution, case: CaseData) -> dict:
    """Key-value view of an ACOPF solution (primal, duals, diagnostics)."""
    from .acopf import Layout

    layout = Layout.for_case(case)
    x = np.asarray(solution.x, dtype=float)
    if x.size != layout.n:
        raise ValueError(f"solution has {x.size} variables, case layout needs {layout.n}")
    theta, v, pg, qg = layout.split(x)
    rec = {
        "case": case.name,
        "status": solution.status,
        "objective": float(solution.objective),
        "kkt_residual": float(solution.kkt_residual),
        "iterations": int(solution.iterations),
        "bus": [b.id for b in case.buses],
        "v": [float(t) for t in v],
        "theta": [float(t) for t in theta],
        "gen_bus": [g.bus for g in case.generators],
        "p_gen": [float(t) for t in pg],
        "q_gen": [float(t) for t in qg],
    }
    if solution.y_eq is not None and solution.y_eq.size == 2 * case.n_bus:
        rec["mu_p"] = [float(t) for t in solution.y_eq[: case.n_bus]]
        rec["mu_q"] = [float(t) for t in solution.y_eq[case.n_bus :]]
    return rec


def write_solution(solution, case: CaseData) -> str:
    return json.dumps(solution_record(solution, case), indent=1)
