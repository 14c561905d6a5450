"""Offline parameterization: training data, GP fit, and prediction with the fitted model.

Each training sample is an exact AC solution at a scaled copy of the base
injections.  Every branch contributes one row: input ``(p_j, q_j)`` of its
receiving bus ``j``, target the exact voltage sensitivity of that branch.
All rows of all samples are stacked and a single GP is fitted to them.
"""

from __future__ import annotations

import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import acpf, gpr
from .errors import DegenerateTargets, FingerprintMismatch, LengthMismatch, NonConvergence, VersionMismatch
from .linmodels import approx_ell, drop_term, exact_alpha, plpf_apply, sqrt_voltage
from .netmodel import Network, Scenario, apply_M_inv

log = logging.getLogger(__name__)

MODEL_FORMAT = "plpf-model"
MODEL_VERSION = 1
MAX_REDRAWS = 3
Z95 = 1.959963984540054
# posterior queries are chunked so the cross-kernel stays a few MB
QUERY_CHUNK = 4096

MODES = ("uniform_random", "fixed_granularity")
DRAWS = ("scalar", "per_bus")


@dataclass(frozen=True)
class TrainingSpec:
    """How training scenarios are drawn.

    ``uniform_random`` scales the base injections by ``u * sign`` with
    ``u ~ U[interval_low, interval_high]`` and a fair random sign.  With
    ``draw="scalar"`` one multiplier is shared by the whole feeder in each
    sample; ``draw="per_bus"`` draws p and q of every bus independently.
    ``fixed_granularity`` ignores the interval and uses ``p_samples``
    equally spaced multipliers over ``[grid_low, grid_high]``.
    """

    p_samples: int = 20
    interval_low: float = 1.0
    interval_high: float = 2.0
    mode: str = "uniform_random"
    draw: str = "scalar"
    seed: int = 0
    grid_low: float = -2.0
    grid_high: float = 3.0
    ell_source: str = "exact"

    def __post_init__(self):
        if self.p_samples < 2:
            raise ValueError("p_samples must be at least 2")
        if not 1.0 <= self.interval_low < self.interval_high:
            raise ValueError("need 1 <= interval_low < interval_high")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.draw not in DRAWS:
            raise ValueError(f"draw must be one of {DRAWS}")
        if not self.grid_low < self.grid_high:
            raise ValueError("need grid_low < grid_high")
        if self.ell_source not in ("exact", "approx"):
            raise ValueError("ell_source must be 'exact' or 'approx'")


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Stacked training rows with their provenance (sample, branch, guard flag)."""

    data: gpr.Dataset
    sample: np.ndarray
    branch: np.ndarray  # receiving bus index, 1..n
    guarded: np.ndarray
    fingerprint: str
    multipliers: tuple = ()

    @property
    def X(self) -> np.ndarray:
        return self.data.X

    @property
    def y(self) -> np.ndarray:
        return self.data.y

    def __len__(self) -> int:
        return len(self.data)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("sample,branch,p,q,alpha,guarded\n")
        for s, b, (p, q), a, g in zip(self.sample, self.branch, self.X, self.y, self.guarded):
            buf.write(f"{s},{b},{p!r},{q!r},{a!r},{int(g)}\n")
        return buf.getvalue().encode()


def _multipliers(spec: TrainingSpec, rng: np.random.Generator, n: int):
    """One draw: a scalar, or a (p_mult, q_mult) pair of length-n vectors."""
    if spec.draw == "scalar":
        return rng.uniform(spec.interval_low, spec.interval_high) * rng.choice((-1.0, 1.0))
    mags = rng.uniform(spec.interval_low, spec.interval_high, size=(2, n))
    return mags * rng.choice((-1.0, 1.0), size=(2, n))


def _scenario(base: Scenario, mult) -> Scenario:
    if np.ndim(mult) == 0:
        return base.scaled(float(mult))
    return Scenario(mult[0] * base.p, mult[1] * base.q)


def _sample_rows(network: Network, scenario: Scenario, ell_source: str):
    sol = acpf.solve(network, scenario)
    ell = sol.ell if ell_source == "exact" else approx_ell(network, sol.V)
    return exact_alpha(network, scenario, ell)


def _map(fn, args, workers: int):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args)))


def gen_training_set(network: Network, base: Scenario, spec: TrainingSpec, workers: int = 1) -> TrainingSet:
    """Solve ``spec.p_samples`` AC power flows and stack the per-branch rows.

    A non-convergent uniform draw is replaced by a fresh draw, at most
    ``MAX_REDRAWS`` times over the whole set, after which the error
    propagates.  Grid points are never redrawn.
    """
    n = network.n_buses
    if base.n != n:
        raise LengthMismatch(f"base scenario has {base.n} buses, network has {n}")
    if not (np.any(base.p) or np.any(base.q)):
        # every target would be a guarded zero
        raise DegenerateTargets("base scenario has no nonzero injection")
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "fixed_granularity":
        mults = list(np.linspace(spec.grid_low, spec.grid_high, spec.p_samples))
    else:
        mults = [_multipliers(spec, rng, n) for _ in range(spec.p_samples)]

    results = _map(_try_sample, [(network, _scenario(base, m), spec.ell_source) for m in mults], workers)
    redraws = 0
    for i, res in enumerate(results):
        while isinstance(res, NonConvergence):
            if spec.mode == "fixed_granularity" or redraws >= MAX_REDRAWS:
                raise res
            redraws += 1
            log.warning("training sample %d did not converge; redrawing (%d/%d)", i, redraws, MAX_REDRAWS)
            mults[i] = _multipliers(spec, rng, n)
            res = _try_sample(network, _scenario(base, mults[i]), spec.ell_source)
        results[i] = res

    X, y, sample, branch, guarded = [], [], [], [], []
    for i, (m, av) in enumerate(zip(mults, results)):
        sc = _scenario(base, m)
        X.append(np.column_stack([sc.p, sc.q]))
        y.append(av.alpha)
        sample.append(np.full(n, i))
        branch.append(np.arange(1, n + 1))
        guarded.append(av.guarded)
    stored = tuple(float(m) if np.ndim(m) == 0 else "per_bus" for m in mults)
    return TrainingSet(
        gpr.Dataset(np.vstack(X), np.concatenate(y)),
        np.concatenate(sample), np.concatenate(branch), np.concatenate(guarded),
        network.fingerprint(), stored,
    )


def _try_sample(network: Network, scenario: Scenario, ell_source: str):
    try:
        return _sample_rows(network, scenario, ell_source)
    except NonConvergence as exc:
        return exc


@dataclass(frozen=True, eq=False)
class ParameterizedModel:
    """A GP over per-bus (p, q) that supplies alpha_hat for any scenario of one feeder."""

    gp: gpr.GPModel
    fingerprint: str
    n_buses: int
    info: dict = field(default_factory=dict)

    def alpha(self, p, q, return_var: bool = True):
        """Posterior mean (and variance) of alpha for (n,) or (n, batch) injections."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != q.shape or p.shape[0] != self.n_buses:
            raise LengthMismatch(f"expected injections with leading length {self.n_buses}")
        # column-major flattening keeps each scenario's buses contiguous
        rows = np.column_stack([p.reshape(-1, order="F"), q.reshape(-1, order="F")])
        mus, vrs = [], []
        for s in range(0, rows.shape[0], QUERY_CHUNK):
            out = gpr.posterior(self.gp, rows[s:s + QUERY_CHUNK], return_var=return_var)
            if return_var:
                mus.append(out[0])
                vrs.append(out[1])
            else:
                mus.append(out)
        mu = np.concatenate(mus).reshape(p.shape, order="F")
        if not return_var:
            return mu
        return mu, np.concatenate(vrs).reshape(p.shape, order="F")


def _check_fingerprint(expected: str, network: Network) -> None:
    if expected != network.fingerprint():
        raise FingerprintMismatch(
            f"model was built for feeder {expected[:12]}..., got {network.fingerprint()[:12]}..."
        )


def parameterize(
    network: Network,
    data: TrainingSet,
    restarts: int = 5,
    seed: int = 0,
    noise_var: float | None = None,
    info: dict | None = None,
) -> ParameterizedModel:
    """Fit the GP on ``data``.  ``noise_var=None`` estimates a white-noise term."""
    _check_fingerprint(data.fingerprint, network)
    gp = gpr.fit(data.data, restarts=restarts, seed=seed, noise_var=noise_var)
    meta = {"restarts": restarts, "fit_seed": seed, "noise": "estimated" if noise_var is None else "fixed"}
    meta.update(info or {})
    return ParameterizedModel(gp, network.fingerprint(), network.n_buses, meta)


class Prediction(NamedTuple):
    V: np.ndarray
    ci_halfwidth: np.ndarray  # on V
    v: np.ndarray
    ci_halfwidth_v: np.ndarray  # on squared magnitudes
    alpha_hat: np.ndarray
    alpha_var: np.ndarray


def predict(model: ParameterizedModel, network: Network, scenario: Scenario) -> Prediction:
    """Voltage magnitudes with a first-order 95% band from the alpha posterior.

    The band on squared magnitudes is ``1.96 |M^-1 (sigma_alpha * drop)|``;
    it is mapped to magnitudes through ``dV = dv / (2 V)``.
    """
    _check_fingerprint(model.fingerprint, network)
    if scenario.n != network.n_buses:
        raise LengthMismatch(f"scenario has {scenario.n} buses, network has {network.n_buses}")
    mu, var = model.alpha(scenario.p, scenario.q)
    w = drop_term(network, scenario.p, scenario.q)
    v = network.root_voltage_sq + apply_M_inv(network, (2.0 - mu) * w)
    V = sqrt_voltage(v)
    hw_v = Z95 * np.abs(apply_M_inv(network, np.sqrt(var) * w))
    return Prediction(V, hw_v / (2.0 * V), v, hw_v, mu, var)


def predict_batch(model: ParameterizedModel, network: Network, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Point predictions of V for injections given column-wise as (n, batch)."""
    _check_fingerprint(model.fingerprint, network)
    mu = model.alpha(P, Q, return_var=False)
    return sqrt_voltage(plpf_apply(network, mu, P, Q))


def save_model(model: ParameterizedModel) -> bytes:
    """Versioned JSON; identical models serialize to identical bytes."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "fingerprint": model.fingerprint,
        "n_buses": model.n_buses,
        "info": model.info,
        "gp": gpr.model_to_dict(model.gp),
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()


def load_model(blob: bytes, network: Network | None = None) -> ParameterizedModel:
    try:
        doc = json.loads(blob.decode() if isinstance(blob, (bytes, bytearray)) else blob)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VersionMismatch(f"not a readable model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise VersionMismatch("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"model version {doc.get('version')!r}, expected {MODEL_VERSION}")
    try:
        model = ParameterizedModel(
            gpr.model_from_dict(doc["gp"]), doc["fingerprint"], int(doc["n_buses"]), doc.get("info", {})
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise VersionMismatch(f"malformed model file: {exc}") from None
    if network is not None:
        _check_fingerprint(model.fingerprint, network)
    return model


def spec_dict(spec: TrainingSpec) -> dict:
    return asdict(spec)
