"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baseline, dynamics, embedding, kernel, rkhs, selection
from .pipeline import ConfigError, PipelineConfig, PipelineError, rebuild_operator, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("koopman_rkhs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _epsilon(text: str):
    return text if text == "auto" else float(text)


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (or a previous run's manifest.json)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--system", choices=dynamics.FLOW_KINDS, help="benchmark system")
    src.add_argument("--input", help="CSV time series instead of a benchmark")
    p.add_argument("--n", type=int, help="number of raw samples")
    p.add_argument("--dt", type=float)
    p.add_argument("--delays", type=int, help="delay-coordinate count Q")
    p.add_argument("--kernel", choices=kernel.FAMILIES)
    p.add_argument("--epsilon", type=_epsilon, help="bandwidth, or 'auto'")
    p.add_argument("--l", type=int, help="number of eigenpairs (default l1)")
    p.add_argument("--l0", type=int)
    p.add_argument("--l1", type=int)
    p.add_argument("--delta0", type=float)
    p.add_argument("--delta1", type=float)
    p.add_argument("--storage", choices=("auto", "dense", "matrix-free"))
    p.add_argument("--eigensolver", choices=("auto", "dense", "lanczos"))
    p.add_argument("--seed", type=int)
    p.add_argument("--basis-cache", dest="basis_cache")
    p.add_argument("--out", dest="output", help="output directory")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {k: getattr(args, k) for k in
                 ("n", "dt", "delays", "kernel", "epsilon", "l", "l0", "l1", "delta0", "delta1",
                  "storage", "eigensolver", "seed", "basis_cache", "output")
                 if getattr(args, k, None) is not None}
    source = args.system or args.input
    if source is not None:
        overrides["source"] = source
    return PipelineConfig.from_dict({**cfg.to_dict(), **overrides})


def cmd_generate(args) -> int:
    flow = dynamics.FlowSpec(args.system)
    traj = dynamics.generate_trajectory(
        flow, dynamics.TrajectoryConfig(args.n, args.dt, tuple(args.x0) if args.x0 else None, args.spinup))
    dynamics.write_series_csv(args.out, traj.series, args.dt)
    print(f"wrote {len(traj)} samples to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    series, _ = dynamics.read_series_csv(args.input, dt=args.dt)
    emb = embedding.delay_embed(series, args.delays)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"e{i}" for i in range(emb.vectors.shape[1])])
        for row in emb.vectors:
            writer.writerow([f"{v:.17g}" for v in row])
    print(f"wrote {len(emb)} embedded vectors of dimension {emb.vectors.shape[1]} to {args.out}")
    return EXIT_OK


def _read_norms(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"norms file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["omega", "w_l0", "w_l1"]:
        raise ConfigError(f"{path}: expected header omega,w_l0,w_l1,ratio")
    vals = np.array([[float(c) for c in r[:3]] for r in rows[1:] if r], dtype=float)
    return vals[:, 0], vals[:, 1], vals[:, 2]


def cmd_spectrum(args) -> int:
    result = run_pipeline(_config(args))
    print(f"eigenpairs: {result.basis.l}, epsilon: {result.gram.spec.epsilon}")
    print(f"norms written to {Path(result.config.output) / 'norms.csv'}")
    return EXIT_OK


def cmd_select(args) -> int:
    omegas, w0, w1 = _read_norms(args.norms)
    keep = selection.selection_mask(w0, w1, args.delta0, args.delta1)
    order = np.lexsort((omegas[keep], np.abs(omegas[keep]), w1[keep]))
    records = [{"omega": float(o), "w_l0": float(a), "w_l1": float(b),
                "ratio": float(selection.ratio(a, b)), "weights_file": None}
               for o, a, b in zip(omegas[keep][order], w0[keep][order], w1[keep][order])]
    text = json.dumps({"candidates": records}, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_baseline(args) -> int:
    series, _ = dynamics.read_series_csv(args.input, dt=args.dt)
    grid = rkhs.FrequencyGrid(series.shape[0], args.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    baseline.write_power_csv(out / "power.csv", baseline.harmonic_average(series, grid))
    if args.covariance:
        emb = embedding.delay_embed(series, args.delays)
        cgrid = rkhs.FrequencyGrid(len(emb), args.dt)
        baseline.write_covariance_csv(out / "covariance_norms.csv",
                                      baseline.covariance_rkhs_norms(emb.vectors, cgrid))
    print(f"baseline spectra written to {out}")
    return EXIT_OK


def cmd_extend(args) -> int:
    run = Path(args.run)
    _, gram = rebuild_operator(run / "manifest.json")
    weights = selection.read_weights_csv(args.weights)
    if weights.shape[0] != gram.n:
        raise ConfigError(f"{args.weights}: {weights.shape[0]} weights, run has {gram.n} samples")
    points, _ = dynamics.read_series_csv(args.points)
    h = rkhs.NystromFunction(coeffs=weights, l=0, rkhs_norm_sq=float("nan"))
    values = np.atleast_1d(rkhs.evaluate(h, points, gram))
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "re", "im"])
        for i, v in enumerate(values):
            writer.writerow([i, f"{v.real:.17g}", f"{v.imag:.17g}"])
    print(f"evaluated {len(values)} points into {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    result = run_pipeline(_config(args))
    omegas = ", ".join(f"{c.omega:.4f}" for c in result.candidates) or "none"
    print(f"selected frequencies: {omegas}")
    print(f"outputs in {result.config.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="koopman-rkhs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate a benchmark and write its observation series")
    p.add_argument("--system", choices=dynamics.FLOW_KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--spinup", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("embed", help="delay-embed a CSV series")
    p.add_argument("--input", required=True)
    p.add_argument("--delays", type=int, required=True)
    p.add_argument("--dt", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("spectrum", help="eigensolve and write truncated RKHS norms")
    _run_options(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("select", help="apply the two-threshold test to a norms CSV")
    p.add_argument("--norms", required=True)
    p.add_argument("--delta0", type=float, default=1.0)
    p.add_argument("--delta1", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("baseline", help="DFT power spectrum and covariance-kernel norms")
    p.add_argument("--input", required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--covariance", action="store_true")
    p.add_argument("--delays", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("extend", help="evaluate a stored eigenfunction at new points")
    p.add_argument("--run", required=True, help="run directory containing manifest.json")
    p.add_argument("--weights", required=True, help="eigenfunction_###.csv from the run")
    p.add_argument("--points", required=True, help="CSV of embedded points")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("run", help="full pipeline")
    _run_options(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.numerical else EXIT_USAGE
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dynamics.IntegrationError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
