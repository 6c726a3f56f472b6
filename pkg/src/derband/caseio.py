"""Matpower-format case files: parsing, validation, serialization.

Only the four matrices needed for a power-flow run are read (``baseMVA``,
``bus``, ``gen``, ``branch``); ``gencost`` and other extensions are skipped
with a warning.  Column order follows the Matpower manual; trailing columns
beyond the ones consumed are ignored.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources


class BusKind(Enum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_load: float = 0.0      # MW
    q_load: float = 0.0      # MVAr
    shunt_g: float = 0.0     # MW at V = 1 p.u.
    shunt_b: float = 0.0     # MVAr at V = 1 p.u.
    v_mag: float = 1.0       # p.u.
    v_ang: float = 0.0       # degrees
    base_kv: float = 0.0
    v_max: float = 1.1
    v_min: float = 0.9


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0           # total line charging, p.u.
    tap_ratio: float = 1.0   # 0 in the file means 1.0; normalized at parse
    phase_shift: float = 0.0  # degrees
    status: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    p_out: float             # MW
    q_out: float = 0.0       # MVAr
    q_max: float = 0.0
    q_min: float = 0.0
    v_set: float = 1.0       # p.u.
    status: bool = True
    p_max: float = 0.0
    p_min: float = 0.0


@dataclass(frozen=True)
class CaseData:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Generator, ...]
    name: str = "case"

    def bus_index(self) -> dict[int, int]:
        """Map bus id -> position in ``buses``."""
        return {bus.id: i for i, bus in enumerate(self.buses)}


class CaseFormatError(ValueError):
    """Malformed case text; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingMatrixError(CaseFormatError):
    pass


class DanglingBusError(CaseFormatError):
    pass


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


_REQUIRED = ("baseMVA", "bus", "gen", "branch")

# Matpower column counts consumed per matrix (extra trailing columns ignored).
_BUS_COLS = 13
_GEN_COLS = 10
_BRANCH_COLS = 11


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _key_of(lhs: str) -> str:
    # 'mpc.bus' and bare 'bus' both map to 'bus'
    return lhs.rsplit(".", 1)[-1].strip()


def _tokenize(text: str):
    """Yield (kind, payload, line_no) items: scalar assignments and matrices.

    Matrices are returned as lists of rows, each row a list of
    (token, line_no) pairs.
    """
    lines = text.splitlines()
    i = 0
    n = len(lines)
    while i < n:
        raw = _strip_comment(lines[i]).strip()
        i += 1
        if not raw or raw.startswith("function"):
            continue
        if "=" not in raw:
            raise CaseFormatError(f"expected an assignment, got {raw!r}", i)
        lhs, rhs = raw.split("=", 1)
        key = _key_of(lhs)
        rhs = rhs.strip()
        if not rhs.startswith("["):
            if not rhs.endswith(";"):
                raise CaseFormatError(f"missing ';' after value for {key!r}", i)
            yield "scalar", (key, rhs[:-1].strip()), i
            continue
        # matrix block: collect until '];'
        body: list[tuple[str, int]] = []
        chunk = rhs[1:]
        line_no = i
        closed = False
        while True:
            end = chunk.find("]")
            if end >= 0:
                for tok in chunk[:end].replace(";", " ; ").split():
                    body.append((tok, line_no))
                closed = True
                break
            for tok in chunk.replace(";", " ; ").split():
                body.append((tok, line_no))
            if i >= n:
                break
            chunk = _strip_comment(lines[i])
            i += 1
            line_no = i
        if not closed:
            raise CaseFormatError(f"matrix {key!r} is never closed with ']'", line_no)
        rows: list[list[tuple[str, int]]] = []
        current: list[tuple[str, int]] = []
        for tok, ln in body:
            if tok == ";":
                if current:
                    rows.append(current)
                    current = []
            else:
                current.append((tok, ln))
        if current:
            rows.append(current)
        yield "matrix", (key, rows), line_no


def _cell(row: list[tuple[str, int]], col: int, matrix: str) -> float:
    tok, ln = row[col]
    try:
        value = float(tok)
    except ValueError:
        raise CaseFormatError(
            f"non-numeric cell {tok!r} in {matrix!r} column {col + 1}", ln
        ) from None
    return value


def _int_cell(row, col, matrix, what) -> int:
    value = _cell(row, col, matrix)
    if value != int(value):
        raise CaseFormatError(
            f"{what} must be an integer, got {value!r} in {matrix!r}", row[col][1]
        )
    return int(value)


def _check_width(row, need: int, matrix: str) -> None:
    if len(row) < need:
        raise CaseFormatError(
            f"{matrix!r} row has {len(row)} columns, need at least {need}",
            row[0][1] if row else None,
        )


def parse_case(text: str, name: str = "case") -> CaseData:
    """Parse Matpower case text into :class:`CaseData`.

    Raises :class:`CaseFormatError` (with a line number) on syntax problems,
    :class:`MissingMatrixError` when a required matrix is absent, and
    :class:`DanglingBusError` when a branch or generator references an
    unknown bus.
    """
    scalars: dict[str, str] = {}
    matrices: dict[str, list] = {}
    for kind, payload, _ in _tokenize(text):
        if kind == "scalar":
            key, value = payload
            scalars[key] = value
        else:
            key, rows = payload
            if key in ("bus", "gen", "branch", "baseMVA"):
                matrices[key] = rows
            else:
                warnings.warn(f"skipping unsupported matrix {key!r}", stacklevel=2)

    for key in _REQUIRED:
        if key not in matrices and key not in scalars:
            raise MissingMatrixError(f"required matrix {key!r} not found")

    try:
        base_mva = float(scalars["baseMVA"])
    except KeyError:
        # baseMVA given in matrix form is unusual but representable
        base_mva = _cell(matrices["baseMVA"][0], 0, "baseMVA")
    except ValueError:
        raise CaseFormatError(f"baseMVA value {scalars['baseMVA']!r} is not numeric") from None

    buses = []
    for row in matrices["bus"]:
        _check_width(row, _BUS_COLS, "bus")
        kind_code = _int_cell(row, 1, "bus", "bus type")
        if kind_code not in (1, 2, 3):
            raise CaseFormatError(f"unknown bus type {kind_code}", row[1][1])
        buses.append(Bus(
            id=_int_cell(row, 0, "bus", "bus id"),
            kind=BusKind(kind_code),
            p_load=_cell(row, 2, "bus"),
            q_load=_cell(row, 3, "bus"),
            shunt_g=_cell(row, 4, "bus"),
            shunt_b=_cell(row, 5, "bus"),
            v_mag=_cell(row, 7, "bus"),
            v_ang=_cell(row, 8, "bus"),
            base_kv=_cell(row, 9, "bus"),
            v_max=_cell(row, 11, "bus"),
            v_min=_cell(row, 12, "bus"),
        ))

    known = {bus.id for bus in buses}

    gens = []
    for row in matrices["gen"]:
        _check_width(row, _GEN_COLS, "gen")
        gen = Generator(
            bus=_int_cell(row, 0, "gen", "generator bus"),
            p_out=_cell(row, 1, "gen"),
            q_out=_cell(row, 2, "gen"),
            q_max=_cell(row, 3, "gen"),
            q_min=_cell(row, 4, "gen"),
            v_set=_cell(row, 5, "gen"),
            status=_cell(row, 7, "gen") != 0.0,
            p_max=_cell(row, 8, "gen"),
            p_min=_cell(row, 9, "gen"),
        )
        if gen.bus not in known:
            raise DanglingBusError(f"generator references unknown bus {gen.bus}", row[0][1])
        gens.append(gen)

    branches = []
    for row in matrices["branch"]:
        _check_width(row, _BRANCH_COLS, "branch")
        tap = _cell(row, 8, "branch")
        branch = Branch(
            from_bus=_int_cell(row, 0, "branch", "from bus"),
            to_bus=_int_cell(row, 1, "branch", "to bus"),
            r=_cell(row, 2, "branch"),
            x=_cell(row, 3, "branch"),
            b=_cell(row, 4, "branch"),
            tap_ratio=1.0 if tap == 0.0 else tap,
            phase_shift=_cell(row, 9, "branch"),
            status=_cell(row, 10, "branch") != 0.0,
        )
        for end in (branch.from_bus, branch.to_bus):
            if end not in known:
                raise DanglingBusError(f"branch references unknown bus {end}", row[0][1])
        branches.append(branch)

    return CaseData(
        base_mva=base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        gens=tuple(gens),
        name=name,
    )


def validate_case(case: CaseData) -> ValidationReport:
    """Check the structural invariants needed before a power-flow run.

    Diagnostics are returned, never raised; an empty report means the case
    is simulable.
    """
    report = ValidationReport()
    add = report.violations.append

    if case.base_mva <= 0:
        add(f"base_mva must be positive, got {case.base_mva}")

    seen: set[int] = set()
    for bus in case.buses:
        if bus.id in seen:
            add(f"duplicate bus id {bus.id}")
        seen.add(bus.id)
        if not bus.v_min <= bus.v_mag <= bus.v_max:
            add(f"bus {bus.id}: v_mag {bus.v_mag} outside [{bus.v_min}, {bus.v_max}]")

    slack = [bus.id for bus in case.buses if bus.kind is BusKind.SLACK]
    if len(slack) == 0:
        add("no slack bus")
    elif len(slack) > 1:
        add(f"multiple slack buses: {slack}")

    for i, branch in enumerate(case.branches):
        tag = f"branch {i} ({branch.from_bus}-{branch.to_bus})"
        if branch.status and branch.x == 0.0:
            add(f"{tag}: zero reactance on an in-service branch")
        if branch.r < 0:
            add(f"{tag}: negative resistance {branch.r}")
        if branch.from_bus == branch.to_bus:
            add(f"{tag}: from and to bus coincide")
        for end in (branch.from_bus, branch.to_bus):
            if end not in seen:
                add(f"{tag}: unknown bus {end}")

    for i, gen in enumerate(case.gens):
        if gen.bus not in seen:
            add(f"generator {i}: unknown bus {gen.bus}")
        if gen.status and not gen.p_min <= gen.p_out <= gen.p_max:
            add(f"generator {i} at bus {gen.bus}: p_out {gen.p_out} "
                f"outside [{gen.p_min}, {gen.p_max}]")

    return report


def _num(value: float) -> str:
    # repr round-trips floats exactly; integers print without the trailing .0
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def case_to_text(case: CaseData) -> str:
    """Serialize back to Matpower case syntax; re-parsing yields an equal case."""
    out = [f"function mpc = {case.name}", "mpc.version = '2';", ""]
    out.append(f"mpc.baseMVA = {_num(case.base_mva)};")
    out.append("")
    out.append("mpc.bus = [")
    for bus in case.buses:
        cols = [bus.id, bus.kind.value, bus.p_load, bus.q_load, bus.shunt_g,
                bus.shunt_b, 1, bus.v_mag, bus.v_ang, bus.base_kv, 1,
                bus.v_max, bus.v_min]
        out.append("\t" + "\t".join(_num(c) for c in cols) + ";")
    out.append("];")
    out.append("")
    out.append("mpc.gen = [")
    for gen in case.gens:
        cols = [gen.bus, gen.p_out, gen.q_out, gen.q_max, gen.q_min,
                gen.v_set, case.base_mva, int(gen.status), gen.p_max, gen.p_min]
        out.append("\t" + "\t".join(_num(c) for c in cols) + ";")
    out.append("];")
    out.append("")
    out.append("mpc.branch = [")
    for branch in case.branches:
        cols = [branch.from_bus, branch.to_bus, branch.r, branch.x, branch.b,
                0, 0, 0, branch.tap_ratio, branch.phase_shift, int(branch.status)]
        out.append("\t" + "\t".join(_num(c) for c in cols) + ";")
    out.append("];")
    return "\n".join(out) + "\n"


def case30_text() -> str:
    """The embedded IEEE 30-bus case file, verbatim."""
    return (resources.files("derband") / "data" / "case30.m").read_text()


def builtin_case30() -> CaseData:
    """Parse the embedded IEEE 30-bus case (30 buses, 41 branches, 6 generators)."""
    return parse_case(case30_text(), name="case30")


def total_load(case: CaseData) -> float:
    """Sum of active loads in MW."""
    return sum(bus.p_load for bus in case.buses)


def with_loads(case: CaseData, p_load: dict[int, float]) -> CaseData:
    """Copy of ``case`` with active loads replaced per ``{bus_id: MW}``."""
    buses = tuple(
        replace(bus, p_load=p_load.get(bus.id, bus.p_load)) for bus in case.buses
    )
    return replace(case, buses=buses)
