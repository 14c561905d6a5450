"""Evaluation protocols: error metrics, load continuation sweeps, Monte Carlo loading.

Models are plain callables ``f(P, Q) -> V_hat`` taking injections as
(n, batch) arrays and returning (n, batch) magnitudes, so the harness does
not care whether a model is simplified DistFlow, a fitted parameterized
model, or anything else.  Exact magnitudes always come from :mod:`acpf`.
"""

from __future__ import annotations

import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from . import acpf
from .errors import NonConvergence, ShapeMismatch
from .linmodels import plpf_apply, sqrt_voltage
from .netmodel import Network, Scenario

log = logging.getLogger(__name__)

CSV_COLUMNS = ("feeder", "model", "protocol", "k", "p_star", "eps_max", "eps_avg", "seed")
DEAD_ZONE = 0.05
MC_HIGH = 1.5

Model = Callable[[np.ndarray, np.ndarray], np.ndarray]


def sdf_model(network: Network) -> Model:
    """Simplified DistFlow as a batch model."""

    def f(P, Q):
        return sqrt_voltage(plpf_apply(network, np.zeros(network.n_buses), P, Q))

    return f


def plpf_model(network: Network, model) -> Model:
    """A fitted :class:`~plpf.pipeline.ParameterizedModel` as a batch model."""
    from .pipeline import predict_batch

    def f(P, Q):
        return predict_batch(model, network, P, Q)

    return f


def error_metrics(V_exact, V_hat) -> tuple[float, float]:
    """``(eps_max, eps_avg)``: largest and mean absolute magnitude error over every entry.

    Both arguments are (n,) or (p_star, n); a single exact profile is
    broadcast against a batch of estimates.
    """
    V_exact = np.atleast_2d(np.asarray(V_exact, dtype=float))
    V_hat = np.atleast_2d(np.asarray(V_hat, dtype=float))
    if V_exact.shape != V_hat.shape:
        if V_exact.shape[0] == 1 and V_exact.shape[1] == V_hat.shape[1]:
            V_exact = np.broadcast_to(V_exact, V_hat.shape)
        else:
            raise ShapeMismatch(f"exact {V_exact.shape} vs estimate {V_hat.shape}")
    if V_hat.size == 0:
        raise ShapeMismatch("no entries to compare")
    return _eps(np.abs(V_exact - V_hat))


def _eps(err: np.ndarray) -> tuple[float, float]:
    emax = float(err.max())
    # summation rounding can put the mean of equal entries one ulp above them
    return emax, min(float(err.mean()), emax)


@dataclass(frozen=True)
class ReportRow:
    feeder: str
    model: str
    protocol: str
    k: float | str  # scaling factor, or "all" for a whole batch
    p_star: int
    eps_max: float
    eps_avg: float
    seed: int | str = ""


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)
        self.metadata.update(other.metadata)

    def select(self, **kw) -> list[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def row(self, **kw) -> ReportRow:
        found = self.select(**kw)
        if len(found) != 1:
            raise KeyError(f"{len(found)} rows match {kw}")
        return found[0]


def _exact_batch(network: Network, scenarios: Sequence[Scenario], workers: int = 1):
    """Exact magnitudes per scenario; None where the AC sweep fails."""

    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_exact_one, [network] * len(scenarios), scenarios))
    return [_exact_one(network, s) for s in scenarios]


def _exact_one(network: Network, scenario: Scenario):
    try:
        return acpf.solve(network, scenario).V
    except NonConvergence as exc:
        log.warning("excluded scenario: %s", exc)
        return None


def _score(models: Mapping[str, Model], P, Q, V_exact):
    out = {}
    for name, f in models.items():
        V_hat = np.asarray(f(P, Q)).T  # (batch, n)
        out[name] = np.abs(V_exact - V_hat)
    return out


def default_k_grid(count: int = 30, low: float = -2.0, high: float = 2.0, dead_zone: float = DEAD_ZONE) -> np.ndarray:
    """``count`` equally spaced factors over [low, high], skipping |k| < dead_zone."""
    grid = np.linspace(low, high, count)
    return grid[np.abs(grid) >= dead_zone]


def continuation_sweep(
    network: Network,
    base: Scenario,
    models: Mapping[str, Model],
    k_grid=None,
    feeder: str = "",
    workers: int = 1,
) -> EvalReport:
    """Score every model on ``k * base`` for each k, plus the pooled batch.

    A k whose AC solution fails is dropped for all models alike and listed
    in ``metadata["excluded_k"]``.
    """
    ks = default_k_grid() if k_grid is None else np.asarray(list(k_grid), dtype=float)
    exact = _exact_batch(network, [base.scaled(k) for k in ks], workers)
    keep = [i for i, V in enumerate(exact) if V is not None]
    excluded = [float(ks[i]) for i in range(len(ks)) if exact[i] is None]
    feeder = feeder or network.name
    report = EvalReport(metadata={
        "protocol": "sweep", "k_grid": [float(k) for k in ks], "excluded_k": excluded,
    })
    if not keep:
        return report
    kk = ks[keep]
    P = np.outer(base.p, kk)
    Q = np.outer(base.q, kk)
    V_exact = np.vstack([exact[i] for i in keep])
    errs = _score(models, P, Q, V_exact)
    for name, e in errs.items():
        report.rows.append(ReportRow(feeder, name, "sweep", "all", len(keep), *_eps(e)))
        for j, k in enumerate(kk):
            report.rows.append(
                ReportRow(feeder, name, "sweep", float(k), 1, *_eps(e[j]))
            )
    return report


def base_load(network: Network, base: Scenario, models: Mapping[str, Model], feeder: str = "") -> EvalReport:
    """Single-scenario protocol at the reference loading."""
    V = acpf.solve(network, base).V[None, :]
    errs = _score(models, base.p[:, None], base.q[:, None], V)
    feeder = feeder or network.name
    rows = [ReportRow(feeder, name, "base", 1.0, 1, *_eps(e)) for name, e in errs.items()]
    return EvalReport(rows, {"protocol": "base"})


def mc_draws(base: Scenario, n_samples: int, seed: int, high: float = MC_HIGH) -> tuple[np.ndarray, np.ndarray]:
    """(n, n_samples) injections; bus j gets ``u * s_j`` with ``u ~ U(0, high)``.

    The complex base injection of each bus is scaled as a whole, so p and q
    of one bus share the draw and the bus keeps its power factor.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, high, size=(base.n, n_samples))
    return u * base.p[:, None], u * base.q[:, None]


def monte_carlo(
    network: Network,
    base: Scenario,
    models: Mapping[str, Model],
    n_samples: int,
    seed: int,
    feeder: str = "",
    workers: int = 1,
    draws: tuple[np.ndarray, np.ndarray] | None = None,
) -> EvalReport:
    """Random loading study.  ``draws`` overrides the sampler (used by tests)."""
    P, Q = mc_draws(base, n_samples, seed) if draws is None else (np.asarray(draws[0]), np.asarray(draws[1]))
    scenarios = [Scenario(P[:, i], Q[:, i]) for i in range(P.shape[1])]
    exact = _exact_batch(network, scenarios, workers)
    keep = [i for i, V in enumerate(exact) if V is not None]
    feeder = feeder or network.name
    report = EvalReport(metadata={"protocol": "mc", "seed": seed, "skipped": len(scenarios) - len(keep)})
    if not keep:
        return report
    V_exact = np.vstack([exact[i] for i in keep])
    errs = _score(models, P[:, keep], Q[:, keep], V_exact)
    for name, e in errs.items():
        report.rows.append(ReportRow(feeder, name, "mc", "all", len(keep), *_eps(e), seed))
    return report


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def emit_csv(report: EvalReport) -> bytes:
    if not report.rows:
        raise ValueError("report has no rows")
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in report.rows:
        buf.write(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue().encode()


def emit_json(report: EvalReport) -> bytes:
    if not report.rows:
        raise ValueError("report has no rows")
    doc = {
        "columns": list(CSV_COLUMNS),
        "rows": [[getattr(r, c) for c in CSV_COLUMNS] for r in report.rows],
        "metadata": report.metadata,
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_svg_profiles(
    network: Network,
    V_exact: np.ndarray,
    profiles: Mapping[str, np.ndarray],
    path: str | Path,
    title: str = "",
    width: int = 640,
    height: int = 360,
) -> Path:
    """Static SVG 1.1 plot of V against bus index: one polyline per model, exact values as markers."""
    V_exact = np.asarray(V_exact, dtype=float)
    n = network.n_buses
    if V_exact.shape != (n,) or any(np.shape(v) != (n,) for v in profiles.values()):
        raise ShapeMismatch(f"profiles must have {n} entries")
    pad = 48
    allv = np.concatenate([V_exact] + [np.asarray(v) for v in profiles.values()])
    lo, hi = float(allv.min()), float(allv.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 1e-3, hi + 1e-3

    def xy(i, v):
        x = pad + (width - 2 * pad) * (i / max(n - 1, 1))
        y = height - pad - (height - 2 * pad) * (v - lo) / (hi - lo)
        return f"{x:.2f},{y:.2f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{escape(title or network.name or "voltage profile")}</title>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#999"/>',
        f'<text x="{pad}" y="{pad - 8}" font-size="11">V [p.u.] {lo:.4f} .. {hi:.4f}</text>',
        f'<text x="{width - pad}" y="{height - pad + 18}" font-size="11" text-anchor="end">bus index</text>',
    ]
    for c, (name, V) in enumerate(profiles.items()):
        color = _PALETTE[c % len(_PALETTE)]
        pts = " ".join(xy(i, v) for i, v in enumerate(V))
        parts.append(f'<polyline class="model" data-model={quoteattr(name)} fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (c + 1)}" font-size="11" fill="{color}">{escape(name)}</text>')
    for i, v in enumerate(V_exact):
        x, y = xy(i, v).split(",")
        parts.append(f'<circle class="exact" cx="{x}" cy="{y}" r="2.5" fill="black"/>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
