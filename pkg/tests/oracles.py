"""Independent reference implementations used only by the tests.

Nothing here imports the solver or model code under test; each oracle works
from raw data (parent arrays, impedances, injections) with dense linear
algebra or closed forms.
"""

from __future__ import annotations

import numpy as np


def dense_incidence(parent, n):
    """(m0, M) from a parent array, built straight from the +1 leave / -1 enter rule."""
    m0 = np.zeros(n)
    M = np.zeros((n, n))
    for j in range(1, n + 1):
        i = parent[j]
        M[j - 1, j - 1] = -1.0
        if i == 0:
            m0[j - 1] = 1.0
        else:
            M[j - 1, i - 1] = 1.0
    return m0, M


def newton_raphson(parent, r, x, p, q, v0=1.0, tol=1e-13, max_iter=30):
    """Polar Newton-Raphson on the bus admittance matrix; returns (|V|, angle) of non-root buses."""
    n = len(r)
    N = n + 1
    Y = np.zeros((N, N), dtype=complex)
    for j in range(1, N):
        i = parent[j]
        y = 1.0 / complex(r[j - 1], x[j - 1])
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    s = np.concatenate([[0j], np.asarray(p) + 1j * np.asarray(q)])
    Vm = np.full(N, np.sqrt(v0))
    Va = np.zeros(N)
    pq = np.arange(1, N)
    for _ in range(max_iter):
        V = Vm * np.exp(1j * Va)
        mis = V * np.conj(Y @ V) - s
        F = np.concatenate([mis.real[pq], mis.imag[pq]])
        if np.max(np.abs(F)) < tol:
            break
        Ibus = Y @ V
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y @ np.diag(V))
        dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(V / Vm)) + np.diag(np.conj(Ibus) * V / Vm)
        J = np.block([
            [dS_dVa.real[np.ix_(pq, pq)], dS_dVm.real[np.ix_(pq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, -F)
        Va[pq] += dx[:n]
        Vm[pq] += dx[n:]
    else:
        raise RuntimeError("oracle NR did not converge")
    return Vm[1:], Va[1:]


def two_bus_voltage(r, x, p, q, v0=1.0):
    """|V1| of a root -> bus 1 feeder with injection p + jq at bus 1.

    With the load S_L = -(p + jq) and l = |S_L|^2 / v1, the branch flow
    equations collapse to ``v1^2 + (2(r P_L + x Q_L) - v0) v1 + |z|^2 |S_L|^2 = 0``;
    the operable solution is the larger root.
    """
    PL, QL = -p, -q
    b = 2 * (r * PL + x * QL) - v0
    c = (r * r + x * x) * (PL * PL + QL * QL)
    v1 = (-b + np.sqrt(b * b - 4 * c)) / 2
    return np.sqrt(v1)


def se_kernel(A, B, sf2, ell):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return sf2 * np.exp(-0.5 * d2 / ell**2)


def dense_gp_posterior(Xtr, y, Xte, sf2, ell, noise):
    """Posterior mean and covariance by explicit matrix inversion."""
    K = se_kernel(Xtr, Xtr, sf2, ell) + noise * np.eye(len(y))
    Ks = se_kernel(Xtr, Xte, sf2, ell)
    Kss = se_kernel(Xte, Xte, sf2, ell)
    Kinv = np.linalg.inv(K)
    return Ks.T @ Kinv @ y, Kss - Ks.T @ Kinv @ Ks


def dense_lml(X, y, sf2, ell, noise):
    K = se_kernel(X, X, sf2, ell) + noise * np.eye(len(y))
    sign, logdet = np.linalg.slogdet(K)
    return -0.5 * y @ np.linalg.solve(K, y) - 0.5 * logdet - 0.5 * len(y) * np.log(2 * np.pi)
