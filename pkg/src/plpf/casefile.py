"""Reader/writer for the subset of the MATPOWER case format used here.

Only ``baseMVA``, ``bus``, ``branch`` and the slack voltage setpoint in
``gen`` are interpreted.  Everything else (``gencost``, areas, ...) is
skipped and reported in :attr:`RawCase.warnings`.  Branch impedances are
read as p.u. and loads as MW / MVAr, as in standard MATPOWER files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CaseFileError, CaseSyntaxError, MissingSection, NonNumericField, UnknownCase
from .netmodel import Network, Scenario, build_network

BUILTIN_CASES = {
    "case33": "case33.m",
    "case69": "case69.m",
    "case2_test": "case2_test.m",
}

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, VM, VA, BASE_KV = 0, 1, 2, 3, 7, 8, 9
F_BUS, T_BUS, BR_R, BR_X, BR_STATUS = 0, 1, 2, 3, 10
GEN_BUS, GEN_VG, GEN_STATUS = 0, 5, 7
REF = 3

_ASSIGN = re.compile(r"(?:mpc\.)?(\w+)\s*=\s*")


@dataclass
class RawCase:
    """Tables as read from the file, before per-unit conversion of loads.

    ``bus`` columns: id, type, Pd [MW], Qd [MVAr], baseKV, Vm, Va.
    ``branch`` columns: from, to, r [p.u.], x [p.u.], status.
    """

    base_mva: float
    bus: np.ndarray
    branch: np.ndarray
    slack_vm: float | None = None
    name: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def slack_bus(self) -> int:
        refs = self.bus[self.bus[:, 1] == REF, 0]
        if refs.size != 1:
            raise CaseFileError(f"expected exactly one reference bus, found {refs.size}")
        return int(refs[0])


def _strip_comment(line: str) -> str:
    # MATPOWER data blocks never contain quoted '%' characters
    i = line.find("%")
    return line if i < 0 else line[:i]


def _read_matrix(lines: list[str], start: int, col: int, name: str) -> tuple[list[list[float]], int]:
    """Parse ``[ ... ];`` beginning at (start, col). Returns rows and the closing line index."""
    rows: list[list[float]] = []
    current: list[float] = []
    i = start
    pos = col
    while i < len(lines):
        text = _strip_comment(lines[i])
        j = pos
        while j < len(text):
            ch = text[j]
            if ch in " \t,\r":
                j += 1
                continue
            if ch == "]":
                if current:
                    rows.append(current)
                return rows, i
            if ch == ";":
                if current:
                    rows.append(current)
                current = []
                j += 1
                continue
            m = re.compile(r"[^\s,;\]]+").match(text, j)
            token = m.group(0)
            try:
                current.append(float(token))
            except ValueError:
                raise NonNumericField(len(rows) + 1, len(current) + 1, token) from None
            j = m.end()
        # newline terminates a row, like ';'
        if current:
            rows.append(current)
            current = []
        i += 1
        pos = 0
    raise CaseSyntaxError(f"matrix {name!r} is not terminated by ']'", start + 1, col + 1)


def parse_matpower(text: str, name: str = "") -> RawCase:
    """Parse MATPOWER case text into a :class:`RawCase`."""
    lines = text.splitlines()
    scalars: dict[str, float] = {}
    matrices: dict[str, list[list[float]]] = {}
    skipped: list[str] = []
    i = 0
    while i < len(lines):
        code = _strip_comment(lines[i])
        m = _ASSIGN.search(code)
        if m is None or code.lstrip().startswith("function"):
            i += 1
            continue
        key = m.group(1)
        rest = code[m.end():]
        if rest.lstrip().startswith("["):
            col = m.end() + (len(rest) - len(rest.lstrip())) + 1
            rows, end = _read_matrix(lines, i, col, key)
            widths = {len(r) for r in rows}
            if len(widths) > 1:
                raise CaseSyntaxError(f"matrix {key!r} has ragged rows {sorted(widths)}", i + 1, col)
            if key in ("bus", "branch", "gen"):
                matrices[key] = rows
            else:
                skipped.append(key)
            i = end + 1
            continue
        value = rest.strip().rstrip(";").strip()
        if key == "baseMVA":
            try:
                scalars[key] = float(value)
            except ValueError:
                raise CaseSyntaxError(f"baseMVA value {value!r} is not a number", i + 1, m.end() + 1) from None
        elif key not in ("version",):
            skipped.append(key)
        i += 1

    if "baseMVA" not in scalars:
        raise MissingSection("baseMVA")
    for section in ("bus", "branch"):
        if section not in matrices:
            raise MissingSection(section)

    bus_rows = matrices["bus"]
    if not bus_rows or len(bus_rows[0]) < BASE_KV + 1:
        raise CaseFileError("bus matrix needs at least 10 columns")
    bus = np.array([[r[BUS_I], r[BUS_TYPE], r[PD], r[QD], r[BASE_KV], r[VM], r[VA]] for r in bus_rows])
    br_rows = matrices["branch"]
    if br_rows and len(br_rows[0]) < BR_X + 1:
        raise CaseFileError("branch matrix needs at least 4 columns")
    branch = np.array(
        [[r[F_BUS], r[T_BUS], r[BR_R], r[BR_X], r[BR_STATUS] if len(r) > BR_STATUS else 1.0] for r in br_rows]
    ).reshape(-1, 5)

    case = RawCase(
        base_mva=scalars["baseMVA"], bus=bus, branch=branch, name=name,
        warnings=[f"skipped section {s!r}" for s in skipped],
    )
    gen = matrices.get("gen")
    if gen:
        slack = case.slack_bus
        for r in gen:
            on = len(r) <= GEN_STATUS or r[GEN_STATUS] > 0
            if int(r[GEN_BUS]) == slack and on and len(r) > GEN_VG:
                case.slack_vm = float(r[GEN_VG])
                break
    return case


def serialize_matpower(case: RawCase, name: str | None = None) -> str:
    """Write ``case`` back as MATPOWER text (round-trips through :func:`parse_matpower`)."""
    name = name or case.name or "case"
    out = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {case.base_mva!r};", "", "mpc.bus = ["]
    for bid, btype, pd, qd, kv, vm, va in case.bus:
        vals = [int(bid), int(btype), pd, qd, 0, 0, 1, vm, va, kv, 1, 1.1, 0.9]
        out.append("\t" + "\t".join(repr(float(v)) if isinstance(v, float) else str(v) for v in vals) + ";")
    out += ["];", ""]
    if case.slack_vm is not None:
        out += ["mpc.gen = [", f"\t{case.slack_bus}\t0\t0\t0\t0\t{case.slack_vm!r}\t100\t1\t0\t0;", "];", ""]
    out.append("mpc.branch = [")
    for f, t, r, x, status in case.branch:
        vals = [int(f), int(t), r, x, 0, 0, 0, 0, 0, 0, int(status), -360, 360]
        out.append("\t" + "\t".join(repr(float(v)) if isinstance(v, float) else str(v) for v in vals) + ";")
    out += ["];", ""]
    return "\n".join(out)


def to_network(case: RawCase) -> tuple[Network, Scenario]:
    """Convert a :class:`RawCase` into a per-unit :class:`Network` and base :class:`Scenario`.

    Out-of-service branches are dropped before the radiality check.  The base
    scenario is injection-positive: ``p = -Pd / baseMVA``.
    """
    slack = case.slack_bus
    buses = [int(b) for b in case.bus[:, 0]]
    live = case.branch[case.branch[:, 4] != 0]
    branches = [(int(f), int(t), float(r), float(x)) for f, t, r, x, _ in live]
    row = buses.index(slack)
    vm = case.slack_vm if case.slack_vm is not None else float(case.bus[row, 5])
    net = build_network(
        buses, branches, slack, root_voltage_sq=vm * vm, base_mva=case.base_mva, name=case.name,
    )
    lookup = {b: k for k, b in enumerate(buses)}
    rows = [lookup[label] for label in net.labels[1:]]
    p = -case.bus[rows, 2] / case.base_mva
    q = -case.bus[rows, 3] / case.base_mva
    return net, Scenario(p, q)


def load_case(path: str | Path) -> tuple[Network, Scenario]:
    path = Path(path)
    return to_network(parse_matpower(path.read_text(), name=path.stem))


@lru_cache(maxsize=None)
def builtin_text(name: str) -> str:
    if name not in BUILTIN_CASES:
        raise UnknownCase(name)
    return resources.files("plpf.data").joinpath(BUILTIN_CASES[name]).read_text()


def builtin(name: str) -> tuple[Network, Scenario]:
    """One of the embedded feeders: ``case33``, ``case69`` or ``case2_test``."""
    return to_network(parse_matpower(builtin_text(name), name=name))


def resolve_case(source: str) -> tuple[Network, Scenario]:
    """Builtin name or path to a ``.m`` file."""
    if source in BUILTIN_CASES:
        return builtin(source)
    path = Path(source)
    if not path.is_file():
        raise CaseFileError(f"no builtin case or file named {source!r}")
    return load_case(path)
