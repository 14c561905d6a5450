"""Radial feeder representation and tree-structured incidence algebra.

Buses are renumbered at construction time: the substation (root) becomes
bus 0 and the remaining buses take indices 1..n in the order they were
supplied.  Branch ``k`` (0-based) is the unique branch whose receiving end
is bus ``k + 1``, so every branch quantity (r, x, P, Q, ell, alpha) is a
length-n vector aligned with the non-root bus quantities.

The reduced incidence matrix ``M`` (rows = branches, columns = non-root
buses, +1 where the branch leaves a bus, -1 where it enters) is never
formed in the hot path.  Its inverse and inverse-transpose are applied
with O(n) tree sweeps::

    (M^-T y)[k] = -(sum of y over the subtree rooted at bus k+1)
    (M^-1 b)[i] = -(sum of b over the branches on the root -> i path)
"""

from __future__ import annotations

import hashlib
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import CycleDetected, DisconnectedBus, LengthMismatch, NonRadialError


class Branch(NamedTuple):
    from_bus: Hashable
    to_bus: Hashable
    r: float
    x: float


@dataclass(frozen=True)
class Scenario:
    """Net complex injections (p + jq) at the non-root buses, in p.u.

    Loads are negative (injection-positive sign convention).
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        q = np.array(self.q, dtype=float).reshape(-1)
        if p.shape != q.shape:
            raise LengthMismatch(f"p has {p.size} entries, q has {q.size}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("scenario injections must be finite")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.p.size

    def scaled(self, k: float) -> "Scenario":
        return Scenario(k * self.p, k * self.q)

    @classmethod
    def zeros(cls, n: int) -> "Scenario":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class RadialCheck:
    """Outcome of :func:`validate_radial`; ``ok`` or a diagnostic."""

    ok: bool
    kind: type[NonRadialError] | None = None
    bus: Hashable | None = None
    branch: int | None = None
    message: str = ""

    def raise_if_failed(self) -> None:
        if not self.ok:
            raise self.kind(self.message, bus=self.bus, branch=self.branch)


def validate_radial(
    buses,
    branches: Sequence[tuple] | None = None,
    root: Hashable = None,
) -> RadialCheck:
    """Check that ``branches`` form a spanning tree of ``buses`` rooted at ``root``.

    ``branches`` holds (from, to, ...) tuples; only the endpoints are read.
    The first offending branch (cycle) or bus (no path to the root) is named
    in the diagnostic.  A :class:`Network` may be passed alone, in which
    case its internal indices are checked.
    """
    if isinstance(buses, Network):
        net = buses
        return validate_radial(range(net.n_buses + 1), [tuple(b[:2]) for b in net.branches], 0)
    buses = list(buses)
    index = {b: i for i, b in enumerate(buses)}
    if len(index) != len(buses):
        dup = next(b for b in buses if list(buses).count(b) > 1)
        return RadialCheck(False, CycleDetected, bus=dup, message=f"bus {dup!r} listed twice")
    if root not in index:
        return RadialCheck(False, DisconnectedBus, bus=root, message=f"root bus {root!r} not in bus list")

    uf = list(range(len(buses)))

    def find(a: int) -> int:
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    for k, br in enumerate(branches):
        f, t = br[0], br[1]
        for end in (f, t):
            if end not in index:
                return RadialCheck(
                    False, DisconnectedBus, bus=end, branch=k,
                    message=f"branch {k} ({f!r}->{t!r}) references unknown bus {end!r}",
                )
        a, b = find(index[f]), find(index[t])
        if a == b:
            return RadialCheck(
                False, CycleDetected, bus=t, branch=k,
                message=f"branch {k} ({f!r}->{t!r}) closes a loop",
            )
        uf[a] = b

    r0 = find(index[root])
    for b in buses:
        if find(index[b]) != r0:
            return RadialCheck(False, DisconnectedBus, bus=b, message=f"bus {b!r} has no path to the root")
    return RadialCheck(True)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable radial feeder with buses renumbered root-first.

    Use :func:`build_network` rather than calling the constructor directly.
    """

    labels: tuple
    parent: np.ndarray  # length n+1; parent[0] == -1
    r: np.ndarray  # length n, indexed by receiving bus - 1
    x: np.ndarray
    root_voltage_sq: float = 1.0
    base_mva: float = 1.0
    per_unit: bool = True
    name: str = ""
    order: np.ndarray = field(init=False, repr=False)
    children: tuple = field(init=False, repr=False)

    def __post_init__(self):
        parent = _frozen(self.parent, dtype=np.int64)
        n = parent.size - 1
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "r", _frozen(self.r))
        object.__setattr__(self, "x", _frozen(self.x))
        if self.r.shape != (n,) or self.x.shape != (n,):
            raise LengthMismatch("r and x must have one entry per non-root bus")
        if len(self.labels) != n + 1:
            raise LengthMismatch("labels must cover the root and every non-root bus")
        if np.any(self.r < 0) or not np.all(np.isfinite(self.r)) or not np.all(np.isfinite(self.x)):
            raise ValueError("branch resistances must be finite and non-negative")

        children: list[list[int]] = [[] for _ in range(n + 1)]
        for j in range(1, n + 1):
            children[int(parent[j])].append(j)
        order = []
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in children[i]:
                order.append(j)
                queue.append(j)
        if len(order) != n:
            raise NonRadialError("parent array does not describe a tree rooted at bus 0")
        object.__setattr__(self, "order", _frozen(order, dtype=np.int64))
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))

    @property
    def n_buses(self) -> int:
        """Number of non-root buses (equals the number of branches)."""
        return self.parent.size - 1

    @property
    def root_voltage(self) -> float:
        return float(np.sqrt(self.root_voltage_sq))

    @property
    def branches(self) -> list[Branch]:
        return [
            Branch(int(self.parent[j]), j, float(self.r[j - 1]), float(self.x[j - 1]))
            for j in range(1, self.n_buses + 1)
        ]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.parent).tobytes())
        h.update(np.ascontiguousarray(self.r).tobytes())
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(np.float64(self.root_voltage_sq).tobytes())
        return h.hexdigest()

    def subtree(self, bus: int) -> list[int]:
        out, stack = [], [bus]
        while stack:
            b = stack.pop()
            out.append(b)
            stack.extend(self.children[b])
        return sorted(out)

    def path(self, bus: int) -> list[int]:
        """Non-root buses on the root -> ``bus`` path (each names its incoming branch)."""
        out = []
        while bus > 0:
            out.append(bus)
            bus = int(self.parent[bus])
        return out[::-1]


def build_network(
    buses: Sequence[Hashable],
    branches: Iterable[tuple],
    root: Hashable,
    *,
    root_voltage_sq: float = 1.0,
    base_mva: float = 1.0,
    name: str = "",
) -> Network:
    """Build a :class:`Network` from labelled buses and (from, to, r, x) branches.

    Branch orientation in the input is irrelevant; every branch is oriented
    away from the root.  Raises :class:`CycleDetected` or
    :class:`DisconnectedBus` for non-radial input.
    """
    branches = [tuple(b) for b in branches]
    validate_radial(buses, branches, root).raise_if_failed()

    labels = [root] + [b for b in buses if b != root]
    index = {b: i for i, b in enumerate(labels)}
    n = len(labels) - 1
    adj: list[list[tuple[int, float, float]]] = [[] for _ in range(n + 1)]
    for f, t, r, x in (b[:4] for b in branches):
        i, j = index[f], index[t]
        adj[i].append((j, float(r), float(x)))
        adj[j].append((i, float(r), float(x)))

    parent = np.full(n + 1, -1, dtype=np.int64)
    rr = np.zeros(n)
    xx = np.zeros(n)
    seen = np.zeros(n + 1, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j, r, x in adj[i]:
            if not seen[j]:
                seen[j] = True
                parent[j] = i
                rr[j - 1] = r
                xx[j - 1] = x
                queue.append(j)
    return Network(
        labels=tuple(labels), parent=parent, r=rr, x=xx,
        root_voltage_sq=float(root_voltage_sq), base_mva=float(base_mva), name=name,
    )


def build_incidence(network: Network) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(m0, M)``: root column and reduced incidence matrix.

    Rows are branches (receiving-bus order), ``M`` columns are non-root buses.
    """
    n = network.n_buses
    m0 = np.zeros(n)
    M = np.zeros((n, n))
    for j in range(1, n + 1):
        i = int(network.parent[j])
        M[j - 1, j - 1] = -1.0
        if i == 0:
            m0[j - 1] = 1.0
        else:
            M[j - 1, i - 1] = 1.0
    return m0, M


def _check(network: Network, v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[0] != network.n_buses:
        raise LengthMismatch(f"{what} has leading length {v.shape[0] if v.ndim else 0}, expected {network.n_buses}")
    return v


def apply_M_inv_T(network: Network, nodal, counter: Counter | None = None) -> np.ndarray:
    """Negative downstream sums: branch k gets -sum(nodal over subtree of bus k+1).

    ``nodal`` may be (n,) or (n, batch).
    """
    nodal = _check(network, nodal, "nodal vector")
    acc = np.zeros((nodal.shape[0] + 1,) + nodal.shape[1:])
    acc[1:] = nodal
    parent = network.parent
    visits = 0
    for j in network.order[::-1]:
        acc[parent[j]] += acc[j]
        visits += 1
    if counter is not None:
        counter["edges"] += visits
    return -acc[1:]


def apply_M_inv(network: Network, branch, counter: Counter | None = None) -> np.ndarray:
    """Negative path sums: bus i gets -sum(branch over the root -> i path).

    ``branch`` may be (n,) or (n, batch).
    """
    branch = _check(network, branch, "branch vector")
    out = np.zeros((branch.shape[0] + 1,) + branch.shape[1:])
    parent = network.parent
    visits = 0
    for j in network.order:
        out[j] = out[parent[j]] - branch[j - 1]
        visits += 1
    if counter is not None:
        counter["edges"] += visits
    return out[1:]


def apply_M(network: Network, nodal) -> np.ndarray:
    """``M @ nodal``: for branch (i, j), nodal[i] - nodal[j] with the root entry taken as 0."""
    nodal = _check(network, nodal, "nodal vector")
    ext = np.zeros((nodal.shape[0] + 1,) + nodal.shape[1:])
    ext[1:] = nodal
    return ext[network.parent[1:]] - ext[1:]


def apply_M_T(network: Network, branch) -> np.ndarray:
    """``M.T @ branch``: net flow leaving each non-root bus."""
    branch = _check(network, branch, "branch vector")
    out = np.zeros((branch.shape[0] + 1,) + branch.shape[1:])
    np.add.at(out, network.parent[1:], branch)
    out[1:] -= branch
    return out[1:]
