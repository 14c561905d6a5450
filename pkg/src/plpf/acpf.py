"""Exact AC power flow for radial feeders by backward/forward sweep.

This is the ground truth every linear model is scored against.  The sweep
is the classic power-summation fixed point on the branch flow model:

* backward: sending-end flow of each branch = downstream load + downstream
  flows + series loss z * |S|^2 / |V_sending|^2
* forward: V_j = V_i - z * conj(S_ij) / conj(V_i)

Convergence is judged on the nodal complex power mismatch evaluated
directly from the bus voltage phasors (see :func:`residual`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NonConvergence
from .netmodel import Network, Scenario

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class ACSolution:
    v: np.ndarray  # squared magnitudes, non-root buses
    V: np.ndarray
    delta: np.ndarray  # rad, relative to the root
    P: np.ndarray  # sending-end branch flows, indexed by receiving bus
    Q: np.ndarray
    ell: np.ndarray  # squared branch current magnitudes
    iterations: int
    residual: float

    @property
    def phasors(self) -> np.ndarray:
        return self.V * np.exp(1j * self.delta)


def _mismatch(network: Network, s: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Complex injection mismatch at non-root buses given phasors ``U`` (root included)."""
    n = network.n_buses
    z = network.r + 1j * network.x
    par = network.parent[1:]
    out = np.zeros(n + 1, dtype=complex)
    drop = U[par] - U[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        current = np.where(z != 0, drop / np.where(z != 0, z, 1.0), 0.0)
    # current leaves the parent and enters the child
    np.add.at(out, par, current)
    out[1:] -= current
    s_calc = U * np.conj(out)
    mism = s_calc[1:] - s
    # zero-impedance branches carry whatever the downstream needs; fold the
    # child's mismatch into its parent so it is not counted as an error
    zero = np.flatnonzero(z == 0) + 1
    if zero.size:
        m = np.concatenate([[0j], mism])
        for j in network.order[::-1]:
            if j in zero:
                m[network.parent[j]] += m[j]
                m[j] = 0
        mism = m[1:]
    return mism


def residual(network: Network, scenario: Scenario, sol: ACSolution) -> float:
    """Max |complex power mismatch| (p.u.) implied by the voltages in ``sol``."""
    n = network.n_buses
    if scenario.n != n or sol.V.size != n or sol.delta.size != n:
        raise LengthMismatch(f"expected length-{n} scenario and solution")
    U = np.concatenate([[network.root_voltage + 0j], sol.V * np.exp(1j * sol.delta)])
    s = scenario.p + 1j * scenario.q
    mism = _mismatch(network, s, U)
    return float(np.max(np.abs(mism))) if n else 0.0


def solve(
    network: Network,
    scenario: Scenario,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ACSolution:
    """Solve the branch flow equations exactly for one injection scenario.

    Raises :class:`NonConvergence` when the sweep fails to reach ``tol``
    within ``max_iter`` iterations or the voltages collapse.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = network.n_buses
    if scenario.n != n:
        raise LengthMismatch(f"scenario has {scenario.n} buses, network has {n}")
    z = network.r + 1j * network.x
    s = scenario.p + 1j * scenario.q
    parent = network.parent
    order = network.order
    rev = order[::-1]

    U = np.full(n + 1, network.root_voltage + 0j)
    S = np.zeros(n + 1, dtype=complex)  # S[j]: sending-end flow of the branch into j
    res = np.inf
    it = 0
    while it < max_iter:
        it += 1
        acc = np.zeros(n + 1, dtype=complex)
        acc[1:] = -s
        # a diverging sweep overflows before the collapse check below catches it
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for j in rev:
                i = parent[j]
                Sj = acc[j]
                Sj = Sj + z[j - 1] * (Sj.real**2 + Sj.imag**2) / abs(U[j]) ** 2
                S[j] = Sj
                acc[i] += Sj
            for j in order:
                i = parent[j]
                U[j] = U[i] - z[j - 1] * np.conj(S[j] / U[i])
        if not np.all(np.isfinite(U)) or np.min(np.abs(U[1:]), initial=np.inf) < 1e-3:
            raise NonConvergence(it, float("inf"))
        res = float(np.max(np.abs(_mismatch(network, s, U)), initial=0.0))
        if res <= tol:
            break
    else:
        raise NonConvergence(it, res)

    # refresh flows against the final voltages
    acc = np.zeros(n + 1, dtype=complex)
    acc[1:] = -s
    for j in rev:
        Sj = acc[j] + z[j - 1] * (acc[j].real**2 + acc[j].imag**2) / abs(U[j]) ** 2
        S[j] = Sj
        acc[parent[j]] += Sj

    V = np.abs(U[1:])
    delta = np.angle(U[1:]) - np.angle(U[0])
    Sflow = S[1:]
    v_send = np.abs(U[parent[1:]]) ** 2
    ell = (Sflow.real**2 + Sflow.imag**2) / v_send
    return ACSolution(
        v=V**2, V=V, delta=delta, P=Sflow.real.copy(), Q=Sflow.imag.copy(),
        ell=ell, iterations=it, residual=res,
    )
