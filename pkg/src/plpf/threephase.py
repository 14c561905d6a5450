"""Three-phase (possibly unbalanced, possibly non-three-wire) extension of the linear model.

Buses and lines carry phase subsets of ``{a, b, c}``.  Quantities are stacked
per bus-phase (columns) and per line-phase (rows) in bus order, phases
alphabetical within each bus.  Mutual impedances are kept in the line data
but dropped by the linear model, which then decouples into one radial
network per phase; :func:`plpf3_solve` exploits that and reuses the
single-phase code path, while :func:`plpf3_assemble` builds the stacked
block matrices explicitly.

Feeder JSON schema::

    {
      "root": "sub", "root_phases": "abc",
      "root_voltage": {"a": 1.0, "b": 1.0, "c": 1.0},      # magnitudes, p.u.
      "buses": [{"id": "1", "phases": "ab",
                 "p": {"a": -0.01, "b": -0.02}, "q": {"a": 0.0, "b": -0.01}}, ...],
      "lines": [{"from": "sub", "to": "1", "phases": "ab",
                 "r": [[...], [...]], "x": [[...], [...]]}, ...]
    }

``r`` and ``x`` are the real and imaginary parts of the |phases| x |phases|
impedance block; missing ``p``/``q`` entries are zero.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import LengthMismatch, NonRadialError, UnreachedBusPhase
from .linmodels import plpf_assemble, plpf_solve
from .netmodel import Network, Scenario, build_network, validate_radial

PHASES = ("a", "b", "c")


@dataclass(frozen=True)
class PhaseSet:
    phases: tuple[str, ...]

    def __post_init__(self):
        ph = tuple(sorted(set(self.phases)))
        if not ph or any(p not in PHASES for p in ph):
            raise ValueError(f"phase set must be a non-empty subset of {PHASES}, got {self.phases!r}")
        object.__setattr__(self, "phases", ph)

    @classmethod
    def of(cls, spec) -> "PhaseSet":
        if isinstance(spec, PhaseSet):
            return spec
        return cls(tuple(spec))

    def __iter__(self):
        return iter(self.phases)

    def __len__(self) -> int:
        return len(self.phases)

    def __contains__(self, p) -> bool:
        return p in self.phases

    def issubset(self, other: "PhaseSet") -> bool:
        return set(self.phases) <= set(other.phases)

    def __str__(self) -> str:
        return "".join(self.phases)


@dataclass(frozen=True, eq=False)
class LineImpedanceBlock:
    """Series impedance block of one line; self terms on the diagonal, mutuals off it."""

    phases: PhaseSet
    Z: np.ndarray

    def __post_init__(self):
        ph = PhaseSet.of(self.phases)
        Z = np.atleast_2d(np.asarray(self.Z, dtype=complex))
        k = len(ph)
        if Z.shape != (k, k):
            raise LengthMismatch(f"impedance block is {Z.shape}, phases {ph} need {(k, k)}")
        if np.any(np.diag(Z) == 0):
            raise ValueError("self impedances must be nonzero")
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "Z", Z)

    @property
    def r_self(self) -> np.ndarray:
        return np.diag(self.Z).real.copy()

    @property
    def x_self(self) -> np.ndarray:
        return np.diag(self.Z).imag.copy()


@dataclass(frozen=True)
class Line3:
    from_bus: Hashable
    to_bus: Hashable
    block: LineImpedanceBlock


@dataclass(frozen=True, eq=False)
class ThreePhaseNetwork:
    """Radial feeder with per-bus and per-line phase sets.

    ``buses`` lists the non-root buses; ``lines`` are oriented away from
    the root, one per non-root bus, in the order of ``buses``.
    """

    root: Hashable
    root_phases: PhaseSet
    root_voltage_sq: Mapping[str, float]
    buses: tuple
    bus_phases: Mapping[Hashable, PhaseSet]
    lines: tuple

    @property
    def bus_phase_index(self) -> list[tuple]:
        return [(b, p) for b in self.buses for p in self.bus_phases[b]]

    @property
    def line_phase_index(self) -> list[tuple]:
        return [(ln.to_bus, p) for ln in self.lines for p in ln.block.phases]

    def phase_network(self, phase: str) -> tuple[Network, list]:
        """Single-phase network of the buses carrying ``phase`` (root first, bus order kept)."""
        if phase not in self.root_phases:
            raise UnreachedBusPhase(self.root, phase)
        members = [b for b in self.buses if phase in self.bus_phases[b]]
        branches = []
        for ln in self.lines:
            if phase in ln.block.phases:
                k = ln.block.phases.phases.index(phase)
                z = ln.block.Z[k, k]
                branches.append((ln.from_bus, ln.to_bus, float(z.real), float(z.imag)))
        net = build_network(
            [self.root] + members, branches, self.root,
            root_voltage_sq=float(self.root_voltage_sq[phase]), name=f"phase {phase}",
        )
        return net, members


def build_three_phase(
    root: Hashable,
    root_phases,
    buses: Mapping[Hashable, object],
    lines: Sequence[tuple],
    root_voltage_sq: Mapping[str, float] | float = 1.0,
) -> ThreePhaseNetwork:
    """Validate and orient a three-phase feeder.

    ``buses`` maps each non-root bus to its phases; ``lines`` holds
    ``(from, to, LineImpedanceBlock)`` triples in any orientation.
    """
    rp = PhaseSet.of(root_phases)
    bus_phases = {b: PhaseSet.of(p) for b, p in buses.items()}
    if root in bus_phases:
        raise ValueError("the root must not be listed among the non-root buses")
    all_phases = {root: rp, **bus_phases}
    if isinstance(root_voltage_sq, Mapping):
        v0 = {p: float(root_voltage_sq[p]) for p in rp}
    else:
        v0 = {p: float(root_voltage_sq) for p in rp}

    order = [root] + list(bus_phases)
    validate_radial(order, [(f, t) for f, t, _ in lines], root).raise_if_failed()
    for f, t, blk in lines:
        if not (blk.phases.issubset(all_phases[f]) and blk.phases.issubset(all_phases[t])):
            raise NonRadialError(
                f"line {f!r}-{t!r} carries phases {blk.phases} not present at both ends", bus=t,
            )

    adj: dict = {b: [] for b in order}
    for f, t, blk in lines:
        adj[f].append((t, blk))
        adj[t].append((f, blk))
    incoming = {}
    seen = {root}
    queue = deque([root])
    while queue:
        i = queue.popleft()
        for j, blk in adj[i]:
            if j not in seen:
                seen.add(j)
                incoming[j] = Line3(i, j, blk)
                queue.append(j)
    for b in bus_phases:
        for p in bus_phases[b]:
            if p not in incoming[b].block.phases:
                raise UnreachedBusPhase(b, p)
    return ThreePhaseNetwork(
        root, rp, v0, tuple(bus_phases), bus_phases, tuple(incoming[b] for b in bus_phases),
    )


def build_3p_incidence(net: ThreePhaseNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Stacked incidence ``(M0, M)``: rows line-phases, columns root phases / bus-phases.

    Row (ij, phi) has +1 at the sending bus-phase (i, phi) and -1 at the
    receiving bus-phase (j, phi).
    """
    cols = {bp: k for k, bp in enumerate(net.bus_phase_index)}
    root_cols = {p: k for k, p in enumerate(net.root_phases)}
    rows = net.line_phase_index
    M0 = np.zeros((len(rows), len(root_cols)))
    M = np.zeros((len(rows), len(cols)))
    reached = set()
    pairs = [(ln, p) for ln in net.lines for p in ln.block.phases]
    for r, (ln, p) in enumerate(pairs):
        if ln.from_bus == net.root:
            M0[r, root_cols[p]] = 1.0
        else:
            M[r, cols[(ln.from_bus, p)]] = 1.0
        M[r, cols[(ln.to_bus, p)]] = -1.0
        reached.add((ln.to_bus, p))
    for b, p in cols:
        if (b, p) not in reached:
            raise UnreachedBusPhase(b, p)
    return M0, M


def _alpha3(net: ThreePhaseNetwork, alpha_hat) -> np.ndarray:
    a = np.asarray(alpha_hat, dtype=float).reshape(-1)
    n = len(net.line_phase_index)
    if a.size != n:
        raise LengthMismatch(f"alpha_hat has {a.size} entries, expected {n} line-phases")
    if np.any(np.abs(a) > 1):
        raise ValueError("|alpha_hat| must not exceed 1")
    return a


def plpf3_assemble(net: ThreePhaseNetwork, alpha_hat) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand-side blocks ``((2I - D(alpha)) D(r_self) M^-T, (2I - D(alpha)) D(x_self) M^-T)``.

    The squared voltages satisfy ``M0 v0 + M v = Rhat p + Xhat q``.
    """
    a = _alpha3(net, alpha_hat)
    _, M = build_3p_incidence(net)
    r = np.concatenate([ln.block.r_self for ln in net.lines])
    x = np.concatenate([ln.block.x_self for ln in net.lines])
    MinvT = np.linalg.inv(M).T
    lam = 2.0 - a
    return (lam * r)[:, None] * MinvT, (lam * x)[:, None] * MinvT


def plpf3_solve_dense(net: ThreePhaseNetwork, alpha_hat, p, q) -> np.ndarray:
    """Squared bus-phase voltages from the stacked block system (reference path)."""
    p, q = _injections(net, p, q)
    M0, M = build_3p_incidence(net)
    Rh, Xh = plpf3_assemble(net, alpha_hat)
    v0 = np.array([net.root_voltage_sq[ph] for ph in net.root_phases])
    return np.linalg.solve(M, Rh @ p + Xh @ q - M0 @ v0)


def _injections(net: ThreePhaseNetwork, p, q):
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    n = len(net.bus_phase_index)
    if p.size != n or q.size != n:
        raise LengthMismatch(f"expected {n} bus-phase injections")
    return p, q


def plpf3_solve(net: ThreePhaseNetwork, alpha_hat, p, q) -> np.ndarray:
    """Squared bus-phase voltages, solved phase by phase on the decoupled networks."""
    a = _alpha3(net, alpha_hat)
    p, q = _injections(net, p, q)
    bp = {k: i for i, k in enumerate(net.bus_phase_index)}
    lp = {k: i for i, k in enumerate(net.line_phase_index)}
    out = np.empty(len(bp))
    for phase in net.root_phases:
        members = [b for b in net.buses if phase in net.bus_phases[b]]
        if not members:
            continue
        network, members = net.phase_network(phase)
        # phase_network keeps bus order, so member k is internal bus k + 1
        idx = [bp[(b, phase)] for b in members]
        alpha = a[[lp[(b, phase)] for b in members]]
        mats = plpf_assemble(network, alpha)
        v, _ = plpf_solve(mats, Scenario(p[idx], q[idx]), network.root_voltage_sq)
        out[idx] = v
    return out


def from_dict(doc: dict) -> tuple[ThreePhaseNetwork, np.ndarray, np.ndarray]:
    """Parse the JSON schema above; returns the network and stacked (p, q)."""
    root = doc["root"]
    rp = PhaseSet.of(doc.get("root_phases", "abc"))
    rv = doc.get("root_voltage", 1.0)
    v0 = {p: float(rv[p]) ** 2 for p in rp} if isinstance(rv, Mapping) else float(rv) ** 2
    buses = {b["id"]: b["phases"] for b in doc["buses"]}
    lines = []
    for ln in doc["lines"]:
        Z = np.asarray(ln["r"], dtype=float) + 1j * np.asarray(ln["x"], dtype=float)
        lines.append((ln["from"], ln["to"], LineImpedanceBlock(PhaseSet.of(ln["phases"]), Z)))
    net = build_three_phase(root, rp, buses, lines, v0)
    by_id = {b["id"]: b for b in doc["buses"]}
    p = np.array([by_id[b].get("p", {}).get(ph, 0.0) for b, ph in net.bus_phase_index], dtype=float)
    q = np.array([by_id[b].get("q", {}).get(ph, 0.0) for b, ph in net.bus_phase_index], dtype=float)
    return net, p, q


def load_json(text: str) -> tuple[ThreePhaseNetwork, np.ndarray, np.ndarray]:
    return from_dict(json.loads(text))
