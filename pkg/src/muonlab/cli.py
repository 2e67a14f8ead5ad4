"""
Command-line entry point.

Subcommands::

    run            one experiment from a JSON config
    sweep          grid of runs (``sweep`` section or the spurious sweep), --jobs workers
    oracle         closed-form singular value curves as CSV
    orthogonalize  exact or Newton-Schulz orthogonalization of a matrix file

Exit status: 0 success, 1 invalid input or config, 2 numerical failure.
"""

import argparse
import copy
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import theory
from .config import config_from_dict, load_config, parse_override
from .errors import ConfigError, InvalidInputError, NumericalDivergenceError
from .experiments import _atomic_write, run_experiment, table_csv, write_run
from .linalg import format_matrix, load_matrix, newton_schulz_orthogonalize, orthogonalize_exact

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _build_parser():
    parser = argparse.ArgumentParser(prog="muonlab", description=__doc__.split("\n")[1])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, value parsed as JSON (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")

    add_run_flags(sub.add_parser("run", help="run one experiment"))
    sweep = sub.add_parser("sweep", help="run a grid of experiments")
    add_run_flags(sweep)
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    oracle = sub.add_parser("oracle", help="write closed-form trajectories as CSV")
    oracle.add_argument("--spectrum", required=True, help="comma-separated singular values, e.g. 2,1")
    oracle.add_argument("--t-max", type=float, required=True)
    oracle.add_argument("--init-scale", type=float, default=1e-4, help="sigma_k(0) for the GD curves")
    oracle.add_argument("--points", type=int, default=301, help="samples per mode")
    oracle.add_argument("--out", required=True)

    orth = sub.add_parser("orthogonalize", help="orthogonalize a matrix file")
    orth.add_argument("--in", dest="inp", required=True)
    orth.add_argument("--out", required=True)
    orth.add_argument("--method", choices=("exact", "newton-schulz"), default="exact")
    orth.add_argument("--iterations", type=int, default=5)
    orth.add_argument("--svd", choices=("jacobi", "lapack"), default="jacobi")
    orth.add_argument("--rank-cutoff", type=float, default=1e-12)
    return parser


def _resolve_config(args):
    overrides = [parse_override(text) for text in args.overrides]
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    if args.out is not None:
        overrides.append(("out", args.out))
    if args.config:
        return load_config(args.config, overrides)
    return config_from_dict({}, overrides)


def _out_dir(cfg):
    if cfg.out is None:
        raise ConfigError("out", "an output directory is required (config 'out' or --out)")
    return Path(cfg.out)


def _cmd_run(args):
    cfg = _resolve_config(args)
    if cfg.experiment in ("oracle", "orthogonalize"):
        raise ConfigError("experiment", f"use the '{cfg.experiment}' subcommand for this kind")
    out = _out_dir(cfg)
    result = run_experiment(cfg)
    write_run(out, cfg, result)
    if result.status != "ok":
        raise NumericalDivergenceError(f"run diverged; partial trajectory kept in {out}")
    print(f"wrote {out} ({result.fingerprint})")
    return EXIT_OK


def _grid_configs(cfg):
    keys = sorted(cfg.sweep)
    base = cfg.to_dict()
    base["sweep"] = {}
    configs = []
    for values in itertools.product(*(cfg.sweep[k] for k in keys)):
        raw = copy.deepcopy(base)
        sub = config_from_dict(raw, list(zip(keys, values)))
        configs.append((dict(zip(keys, values)), sub))
    return configs


def _sweep_worker(cfg):
    result = run_experiment(cfg)
    return cfg, result


def _cmd_sweep(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be a positive integer")
    if cfg.experiment == "spurious-sweep" and not cfg.sweep:
        result = run_experiment(cfg, jobs=args.jobs)
        write_run(out, cfg, result)
        if result.status != "ok":
            raise NumericalDivergenceError("at least one sweep run diverged")
        print(f"wrote {out} ({result.fingerprint})")
        return EXIT_OK
    if not cfg.sweep:
        raise ConfigError("sweep", "sweep needs a 'sweep' section mapping dotted keys to value lists")
    grid = _grid_configs(cfg)
    configs = [c for _, c in grid]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_sweep_worker, configs))
    else:
        done = [_sweep_worker(c) for c in configs]
    point_of = {c.fingerprint(): point for point, c in grid}
    rows = []
    failed = False
    # Deterministic merge: fingerprint order, independent of worker scheduling.
    for sub_cfg, result in sorted(done, key=lambda pair: pair[0].fingerprint()):
        fp = sub_cfg.fingerprint()
        write_run(out / fp, sub_cfg, result)
        failed |= result.status != "ok"
        row = {"fingerprint": fp, **point_of[fp], "status": result.status}
        row.update({k: v for k, v in result.metrics.items()
                    if isinstance(v, (int, float, str)) or v is None})
        rows.append(row)
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    _atomic_write(out / "sweep_summary.csv", table_csv([{k: row.get(k) for k in keys} for row in rows]))
    _atomic_write(out / "config.json", cfg.to_json() + "\n")
    if failed:
        raise NumericalDivergenceError("at least one sweep run diverged")
    print(f"wrote {len(rows)} runs to {out}")
    return EXIT_OK


def oracle_rows(spectrum, t_max, init_scale=1e-4, points=301):
    """Rows ``(t, k, sigma_gd, sigma_spectral)`` with ``k`` counted from 1."""
    spec = theory.SpectrumSpec(tuple(spectrum), init_scale)
    if not t_max > 0 or points < 2:
        raise InvalidInputError("need t_max > 0 and at least two points")
    ts = np.linspace(0.0, t_max, points)
    rows = []
    for k, sk in enumerate(spec.s):
        gd = theory.gd_sigma_trajectory(sk, spec.init_scale if sk > 0 else 0.0, ts)
        sp = theory.spectral_sigma_trajectory(sk, ts)
        rows += [(t, k + 1, g, s) for t, g, s in zip(ts, gd, sp)]
    return rows


def _cmd_oracle(args):
    try:
        spectrum = [float(x) for x in args.spectrum.split(",") if x.strip()]
    except ValueError:
        raise InvalidInputError(f"bad --spectrum {args.spectrum!r}") from None
    rows = oracle_rows(spectrum, args.t_max, args.init_scale, args.points)
    lines = ["t,k,sigma_gd,sigma_spectral"]
    lines += [f"{float(t)!r},{k},{float(g)!r},{float(s)!r}" for t, k, g, s in rows]
    _atomic_write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_orthogonalize(args):
    g = load_matrix(args.inp)
    if args.method == "exact":
        q = orthogonalize_exact(g, args.rank_cutoff, args.svd)
    else:
        q = newton_schulz_orthogonalize(g, args.iterations)
    _atomic_write(args.out, format_matrix(q))
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "oracle": _cmd_oracle,
             "orthogonalize": _cmd_orthogonalize}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are input errors here.
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return _COMMANDS[args.command](args)
    except NumericalDivergenceError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
