"""Command-line entry point: ``plpf solve | train | eval``.

Exit codes: 0 success, 1 usage error, 2 unreadable input (case or model
file), 3 power flow failure, 4 GP fitting failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, acpf
from . import evalharness as ev
from . import pipeline as pl
from .casefile import BUILTIN_CASES, resolve_case
from .errors import (
    CaseFileError,
    DegenerateTargets,
    FactorizationFailure,
    FingerprintMismatch,
    NegativeSquaredVoltage,
    NonConvergence,
    NonRadialError,
    UnknownCase,
    VersionMismatch,
)
from .linmodels import sdistflow_solve, sqrt_voltage

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_PF, EXIT_FIT = 0, 1, 2, 3, 4

log = logging.getLogger("plpf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _samples(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError("need at least 2 training samples")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plpf", description="Parameterized linear power flow for radial feeders.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    case_help = f"builtin case ({', '.join(BUILTIN_CASES)}) or path to a MATPOWER .m file"

    s = sub.add_parser("solve", help="exact AC, simplified DistFlow and (optionally) PLPF voltages")
    s.add_argument("--case", required=True, help=case_help)
    s.add_argument("--k", type=float, default=1.0, help="scale the base injections by k (default 1)")
    s.add_argument("--model", help="fitted model file; adds PLPF columns")
    s.add_argument("--out", help="also write the table as CSV to this path")
    s.add_argument("--force", action="store_true", help="overwrite existing output files")

    t = sub.add_parser("train", help="generate training data and fit the GP")
    t.add_argument("--case", required=True, help=case_help)
    t.add_argument("--samples", type=_samples, default=20, help="training scenarios (>= 2, default 20)")
    t.add_argument("--mode", choices=("uniform", "grid"), default="uniform",
                   help="uniform: random multipliers in +-[1, 2]; grid: equally spaced over [-2, 3]")
    t.add_argument("--draw", choices=pl.DRAWS, default="scalar",
                   help="one multiplier per scenario (scalar) or per bus component (per_bus)")
    t.add_argument("--noise", choices=("estimate", "zero"), default="estimate",
                   help="estimate a white-noise variance or fix it to 0")
    t.add_argument("--restarts", type=_positive_int, default=5, help="optimizer restarts (default 5)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=".", help="output directory for model.json and dataset.csv")
    t.add_argument("--force", action="store_true", help="overwrite existing output files")

    e = sub.add_parser("eval", help="score PLPF against simplified DistFlow")
    e.add_argument("--case", required=True, help=case_help)
    e.add_argument("--model", help="fitted model file from 'train'")
    e.add_argument("--protocol", choices=("base", "sweep", "mc"), default="base")
    e.add_argument("--mc-samples", type=_positive_int, default=1000)
    e.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
    e.add_argument("--svg", help="write base-load voltage profiles as SVG to this path")
    e.add_argument("--json", action="store_true", help="emit the JSON report instead of CSV")
    e.add_argument("--out", help="report path (default: stdout)")
    e.add_argument("--force", action="store_true", help="overwrite existing output files")
    return p


def _workers() -> int:
    raw = os.environ.get("PLPF_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"PLPF_THREADS must be an integer, got {raw!r}") from None


def _writable(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    return path


def _load_model(path: str | None, network):
    if not path:
        raise UsageError("a fitted model is required: run 'plpf train --case ... --out DIR' and pass --model DIR/model.json")
    mp = Path(path)
    if not mp.is_file():
        raise UsageError(f"model file {mp} not found; create one with 'plpf train'")
    return pl.load_model(mp.read_bytes(), network)


def cmd_solve(args, out) -> int:
    network, base = resolve_case(args.case)
    scenario = base.scaled(args.k)
    target = _writable(Path(args.out), args.force) if args.out else None
    model = _load_model(args.model, network) if args.model else None
    sol = acpf.solve(network, scenario)
    V_sdf = sqrt_voltage(sdistflow_solve(network, scenario))
    cols = ["bus", "label", "V_exact", "V_sdf", "err_sdf"]
    data = [np.arange(1, network.n_buses + 1), list(network.labels[1:]), sol.V, V_sdf, np.abs(V_sdf - sol.V)]
    if model is not None:
        pred = pl.predict(model, network, scenario)
        cols += ["V_plpf", "err_plpf", "ci95_plpf"]
        data += [pred.V, np.abs(pred.V - sol.V), pred.ci_halfwidth]
    lines = [",".join(cols)]
    for row in zip(*data):
        lines.append(",".join(str(v) if i < 2 else f"{v:.8f}" for i, v in enumerate(row)))
    text = "\n".join(lines) + "\n"
    out.write(text)
    if target is not None:
        target.write_text(text)
    print(f"# AC sweep: {sol.iterations} iterations, residual {sol.residual:.2e}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args, out) -> int:
    network, base = resolve_case(args.case)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    model_path = _writable(outdir / "model.json", args.force)
    data_path = _writable(outdir / "dataset.csv", args.force)
    spec = pl.TrainingSpec(
        p_samples=args.samples,
        mode="uniform_random" if args.mode == "uniform" else "fixed_granularity",
        draw=args.draw,
        seed=args.seed,
    )
    data = pl.gen_training_set(network, base, spec, workers=_workers())
    info = {"case": network.name, "training": pl.spec_dict(spec)}
    model = pl.parameterize(
        network, data, restarts=args.restarts, seed=args.seed,
        noise_var=None if args.noise == "estimate" else 0.0, info=info,
    )
    model_path.write_bytes(pl.save_model(model))
    data_path.write_bytes(data.to_csv())
    hp = model.gp.hyperparams
    out.write(
        f"rows {len(data)} (guarded {int(data.guarded.sum())}), "
        f"signal_var {hp.signal_var:.6g}, length_scale {hp.length_scale:.6g}, noise_var {hp.noise_var:.6g}, "
        f"log-likelihood {model.gp.log_likelihood:.6g}\n"
        f"wrote {model_path} and {data_path}\n"
    )
    return EXIT_OK


def cmd_eval(args, out) -> int:
    network, base = resolve_case(args.case)
    model = _load_model(args.model, network)
    target = _writable(Path(args.out), args.force) if args.out else None
    svg = _writable(Path(args.svg), args.force) if args.svg else None
    models = {"PLPF": ev.plpf_model(network, model), "SDF": ev.sdf_model(network)}
    feeder = network.name
    if args.protocol == "base":
        report = ev.base_load(network, base, models, feeder)
    elif args.protocol == "sweep":
        report = ev.continuation_sweep(network, base, models, feeder=feeder, workers=_workers())
    else:
        report = ev.monte_carlo(network, base, models, args.mc_samples, args.seed, feeder, workers=_workers())
    blob = ev.emit_json(report) if args.json else ev.emit_csv(report)
    if target is not None:
        target.write_bytes(blob)
    else:
        out.write(blob.decode())
    if svg is not None:
        V = acpf.solve(network, base).V
        profiles = {name: np.asarray(f(base.p[:, None], base.q[:, None]))[:, 0] for name, f in models.items()}
        ev.emit_svg_profiles(network, V, profiles, svg, title=f"{feeder} base load")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "train": cmd_train, "eval": cmd_eval}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        resolved = {k: v for k, v in vars(args).items()}
        resolved["threads"] = _workers()
        print(json.dumps(resolved, sort_keys=True), file=sys.stderr)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"plpf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FingerprintMismatch as exc:
        print(f"plpf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseFileError, NonRadialError, UnknownCase, VersionMismatch, OSError) as exc:
        print(f"plpf: cannot read input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NonConvergence, NegativeSquaredVoltage) as exc:
        print(f"plpf: power flow failed: {exc}", file=sys.stderr)
        return EXIT_PF
    except (DegenerateTargets, FactorizationFailure) as exc:
        print(f"plpf: GP fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
