"""Linear voltage models: simplified DistFlow and the parameterized linear power flow.

Both models write squared voltage magnitudes as

    v_hat = v0 + M^-1 diag(2 - alpha_hat) (diag(r) M^-T p + diag(x) M^-T q)

with ``alpha_hat = 0`` giving simplified DistFlow.  The branch vector
``diag(r) M^-T p + diag(x) M^-T q`` (the lossless r*P + x*Q of each branch) is
called the *drop term* below.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NegativeSquaredVoltage, SingularLambda, ZeroImpedanceBranch
from .netmodel import Network, Scenario, apply_M, apply_M_inv, apply_M_inv_T

DEFAULT_EPS_DENOM = 1e-9
ALPHA_WARN = 0.1


@dataclass(frozen=True)
class AlphaVector:
    """Per-branch voltage sensitivity; ``guarded`` marks entries forced to 0."""

    alpha: np.ndarray
    guarded: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        g = np.asarray(self.guarded, dtype=bool).reshape(-1)
        if a.shape != g.shape:
            raise LengthMismatch("alpha and guard mask differ in length")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "guarded", g)

    @classmethod
    def of(cls, values) -> "AlphaVector":
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values, np.zeros(values.size, dtype=bool))

    def __len__(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class PlpfMatrices:
    Rhat: np.ndarray
    Xhat: np.ndarray

    @property
    def n(self) -> int:
        return self.Rhat.shape[0]


def _as_alpha(alpha) -> np.ndarray:
    return alpha.alpha if isinstance(alpha, AlphaVector) else np.asarray(alpha, dtype=float)


def drop_term(network: Network, p, q) -> np.ndarray:
    """``r * (M^-T p) + x * (M^-T q)``; accepts (n,) or (n, batch) injections."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise LengthMismatch("p and q differ in shape")
    r = network.r.reshape((-1,) + (1,) * (p.ndim - 1))
    x = network.x.reshape((-1,) + (1,) * (p.ndim - 1))
    return r * apply_M_inv_T(network, p) + x * apply_M_inv_T(network, q)


def plpf_apply(network: Network, alpha, p, q) -> np.ndarray:
    """Matrix-free squared voltages for (n,) or (n, batch) injections."""
    a = _as_alpha(alpha)
    if a.shape[0] != network.n_buses:
        raise LengthMismatch(f"alpha has {a.shape[0]} entries, expected {network.n_buses}")
    w = drop_term(network, p, q)
    if a.ndim < w.ndim:
        a = a.reshape(a.shape + (1,) * (w.ndim - a.ndim))
    return network.root_voltage_sq + apply_M_inv(network, (2.0 - a) * w)


def sdistflow_solve(network: Network, scenario: Scenario) -> np.ndarray:
    """Squared voltages of the lossless simplified DistFlow model."""
    if scenario.n != network.n_buses:
        raise LengthMismatch(f"scenario has {scenario.n} buses, network has {network.n_buses}")
    w = drop_term(network, scenario.p, scenario.q)
    return network.root_voltage_sq + 2.0 * apply_M_inv(network, w)


def exact_alpha(
    network: Network,
    scenario: Scenario,
    ell,
    eps_denom: float = DEFAULT_EPS_DENOM,
) -> AlphaVector:
    """Voltage sensitivity that makes the linear model reproduce the exact voltages.

    Obtained by equating the exact squared-voltage solution of the branch
    flow model with the parameterized linear form::

        alpha = [2 (r * M^-T(r*ell) + x * M^-T(x*ell)) + (r^2 + x^2) * ell] / drop

    Entries whose ``|drop| < eps_denom`` are set to 0 and flagged.
    """
    ell = np.asarray(ell, dtype=float)
    n = network.n_buses
    if ell.shape != (n,) or scenario.n != n:
        raise LengthMismatch(f"expected length-{n} ell and scenario")
    r, x = network.r, network.x
    num = 2.0 * (r * apply_M_inv_T(network, r * ell) + x * apply_M_inv_T(network, x * ell)) + (r * r + x * x) * ell
    den = drop_term(network, scenario.p, scenario.q)
    guarded = np.abs(den) < eps_denom
    alpha = np.where(guarded, 0.0, num / np.where(guarded, 1.0, den))
    return AlphaVector(alpha, guarded)


def ratio_alpha(network: Network, V) -> np.ndarray:
    """Small-angle sensitivity ``|V_sending| / |V_receiving| - 1`` from bus magnitudes."""
    V = np.asarray(V, dtype=float)
    if V.shape != (network.n_buses,):
        raise LengthMismatch(f"V has {V.size} entries, expected {network.n_buses}")
    ext = np.concatenate([[network.root_voltage], V])
    return ext[network.parent[1:]] / V - 1.0


def approx_ell(network: Network, V) -> np.ndarray:
    """Squared branch currents estimated from magnitude drops: (dV)^2 / |z|^2."""
    V = np.asarray(V, dtype=float)
    if V.shape != (network.n_buses,):
        raise LengthMismatch(f"V has {V.size} entries, expected {network.n_buses}")
    z2 = network.r**2 + network.x**2
    zero = np.flatnonzero(z2 == 0)
    if zero.size:
        raise ZeroImpedanceBranch(int(zero[0]))
    dV = apply_M(network, V - network.root_voltage)
    return dV * dV / z2


def lambda_from_alpha(alpha, mode: str = "exact") -> np.ndarray:
    """``1 / (1 + alpha)`` (``exact``) or its first-order expansion ``1 - alpha`` (``binomial``)."""
    a = _as_alpha(alpha)
    if mode == "binomial":
        return 1.0 - a
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    bad = np.flatnonzero(a == -1.0)
    if bad.size:
        raise SingularLambda(int(bad[0]))
    return 1.0 / (1.0 + a)


def plpf_assemble(network: Network, alpha_hat) -> PlpfMatrices:
    """Dense sensitivity matrices ``Rhat``, ``Xhat`` of the parameterized model."""
    a = _as_alpha(alpha_hat)
    n = network.n_buses
    if a.shape != (n,):
        raise LengthMismatch(f"alpha has {a.size} entries, expected {n}")
    if np.any(np.abs(a) >= ALPHA_WARN):
        warnings.warn(
            f"max |alpha_hat| = {np.max(np.abs(a)):.3g} is outside the small-sensitivity regime",
            RuntimeWarning, stacklevel=2,
        )
    cols = apply_M_inv_T(network, np.eye(n))  # M^-T, column by column
    lam = 2.0 - a
    Rhat = apply_M_inv(network, (lam * network.r)[:, None] * cols)
    Xhat = apply_M_inv(network, (lam * network.x)[:, None] * cols)
    return PlpfMatrices(Rhat, Xhat)


def plpf_solve(mats: PlpfMatrices, scenario: Scenario, v0: float) -> tuple[np.ndarray, np.ndarray]:
    """``v_hat = v0 + Rhat p + Xhat q``; returns ``(v_hat, sqrt(v_hat))``."""
    if scenario.n != mats.n:
        raise LengthMismatch(f"scenario has {scenario.n} buses, matrices are {mats.n}x{mats.n}")
    v = v0 + mats.Rhat @ scenario.p + mats.Xhat @ scenario.q
    return v, sqrt_voltage(v)


def sqrt_voltage(v: np.ndarray) -> np.ndarray:
    bad = np.argwhere(v <= 0)
    if bad.size:
        first = tuple(bad[0])
        raise NegativeSquaredVoltage(int(first[0]) + 1, float(v[first]))
    return np.sqrt(v)
