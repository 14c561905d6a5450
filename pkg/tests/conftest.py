from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import strategies as st

from plpf import pipeline as pl
from plpf.casefile import builtin
from plpf.netmodel import Scenario, build_network


@pytest.fixture(scope="session")
def case33():
    return builtin("case33")


@pytest.fixture(scope="session")
def case69():
    return builtin("case69")


@pytest.fixture(scope="session")
def case2():
    return builtin("case2_test")


def random_tree(rng: np.random.Generator, n: int, name: str = "rand"):
    """Random radial feeder with n non-root buses, shuffled labels and branch orientation."""
    labels = [f"b{k}" for k in range(n + 1)]
    perm = rng.permutation(n) + 1
    order = [0] + list(perm)  # order[k] is attached to an earlier entry
    branches = []
    for k in range(1, n + 1):
        parent = order[rng.integers(0, k)]
        child = order[k]
        r = rng.uniform(0.002, 0.08)
        x = rng.uniform(0.002, 0.08)
        a, b = (labels[parent], labels[child]) if rng.random() < 0.5 else (labels[child], labels[parent])
        branches.append((a, b, r, x))
    rng.shuffle(branches)
    net = build_network(labels, branches, "b0", name=name)
    return net


def random_load(rng: np.random.Generator, n: int, scale: float = 0.02) -> Scenario:
    return Scenario(-rng.uniform(0, scale, n), -rng.uniform(0, scale / 2, n))


@st.composite
def trees(draw, max_n: int = 20):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(np.random.default_rng(seed), n), seed


@lru_cache(maxsize=None)
def trained(name: str, seed: int = 0):
    """Default-settings model for an embedded feeder; shared across test modules."""
    net, base = builtin(name)
    data = pl.gen_training_set(net, base, pl.TrainingSpec(seed=seed))
    return net, base, pl.parameterize(net, data, seed=seed)


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    if report.when == "call" or report.outcome != "passed":
        # a setup failure or a failing call both fail the criterion
        _CRITERIA[num] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, detail = _CRITERIA[num]
        terminalreporter.write_line(f"CRITERION {num}: {status}" + (f"  {detail}" if detail else ""))
