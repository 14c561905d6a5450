import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import random_load, trees
from oracles import newton_raphson, two_bus_voltage
from plpf import acpf
from plpf.errors import LengthMismatch, NonConvergence
from plpf.linmodels import approx_ell
from plpf.netmodel import Scenario, build_network


def two_bus(r=0.05, x=0.05):
    return build_network([0, 1], [(0, 1, r, x)], 0)


def test_zero_injection_is_flat(case33):
    net, _ = case33
    sol = acpf.solve(net, Scenario.zeros(net.n_buses))
    assert np.all(sol.v == net.root_voltage_sq)
    assert np.all(sol.P == 0) and np.all(sol.Q == 0) and np.all(sol.ell == 0)
    assert sol.iterations == 1
    assert acpf.residual(net, Scenario.zeros(net.n_buses), sol) == 0.0


def test_two_bus_closed_form():
    net = two_bus()
    sol = acpf.solve(net, Scenario([-0.3], [-0.2]))
    assert abs(sol.V[0] - two_bus_voltage(0.05, 0.05, -0.3, -0.2)) <= 1e-10


def test_case33_matches_newton_raphson(case33):
    net, base = case33
    sol = acpf.solve(net, base)
    Vm, Va = newton_raphson(net.parent, net.r, net.x, base.p, base.q)
    assert np.max(np.abs(sol.V - Vm)) <= 1e-8
    assert np.max(np.abs(sol.delta - Va)) <= 1e-8
    assert 0.90 <= sol.V.min() <= 0.92
    assert sol.residual <= 1e-10
    assert acpf.residual(net, base, sol) <= 1e-10


def test_solution_invariants(case69):
    net, base = case69
    sol = acpf.solve(net, base)
    assert np.allclose(sol.V, np.sqrt(sol.v), rtol=0, atol=1e-15)
    v_send = np.concatenate([[net.root_voltage_sq], sol.v])[net.parent[1:]]
    assert np.allclose(sol.ell, (sol.P**2 + sol.Q**2) / v_send, rtol=1e-12, atol=0)


def test_loss_consistency(case33):
    net, base = case33
    sol = acpf.solve(net, base)
    root_branches = net.parent[1:] == 0
    p_root = sol.P[root_branches].sum()
    assert abs(-base.p.sum() + np.sum(net.r * sol.ell) - p_root) <= 1e-9


def test_perturbed_voltage_residual(case33):
    net, base = case33
    sol = acpf.solve(net, base)
    V = sol.V.copy()
    V[10] += 0.01
    bad = dataclasses.replace(sol, V=V, v=V**2)
    assert acpf.residual(net, base, bad) > 1e-4


def test_monotone_in_load(case33):
    net, base = case33
    mins = [acpf.solve(net, base.scaled(k)).V.min() for k in (0.5, 1.0, 1.5)]
    assert mins[0] > mins[1] > mins[2]


def test_non_convergence_at_extreme_load(case33):
    net, base = case33
    with pytest.raises(NonConvergence) as exc:
        acpf.solve(net, base.scaled(5))
    assert exc.value.iterations >= 1
    with pytest.raises(NonConvergence):
        acpf.solve(net, base, max_iter=1)


def test_bad_arguments(case33):
    net, base = case33
    with pytest.raises(ValueError):
        acpf.solve(net, base, tol=0)
    with pytest.raises(LengthMismatch):
        acpf.solve(net, Scenario([0.0], [0.0]))


def test_approx_ell_quality(case33):
    # report-only quality check of the magnitude-drop current estimate
    net, base = case33
    sol = acpf.solve(net, base)
    rel = np.abs(approx_ell(net, sol.V) - sol.ell) / sol.ell
    print(f"approx ell relative error on case33: median {np.median(rel):.3%}, max {rel.max():.3%}")
    assert np.all(np.isfinite(rel))


def test_deterministic(case69):
    net, base = case69
    a, b = acpf.solve(net, base), acpf.solve(net, base)
    assert np.array_equal(a.V, b.V) and np.array_equal(a.delta, b.delta)


@settings(max_examples=40, deadline=None)
@given(trees(max_n=15))
def test_random_trees_match_newton_raphson(tree):
    net, seed = tree
    sc = random_load(np.random.default_rng(seed), net.n_buses)
    sol = acpf.solve(net, sc)
    Vm, _ = newton_raphson(net.parent, net.r, net.x, sc.p, sc.q)
    assert np.max(np.abs(sol.V - Vm)) <= 1e-8
