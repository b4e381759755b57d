"""Command-line front end: ``qsd-duffing {quantum-lambda,classical-lambda,sweep,validate}``.

Settings are layered: command-line flags override a ``key = value`` file
given by ``--config``, which overrides built-in defaults.  Result files are
CSV with a fixed column order, 9 significant digits and a ``status`` column
in place of NaN.  Every CSV written to disk gets a JSON manifest beside it
(``<out>.manifest.json``); when the CSV goes to standard output, the manifest
is printed to standard error as one ``manifest: {...}`` line.

Exit codes: 0 success, 1 failed validation, 2 invalid invocation, 3
simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import platform
import sys
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .classical_oracle import benettin_lyapunov
from .ensemble import (
    EnsembleConfig,
    auto_levels,
    estimate_levels,
    estimated_cost,
    run_ensemble,
    sweep_beta,
)
from .errors import QSDError
from .fock_space import DampingConvention, DuffingConfig
from .lyapunov import LyapunovSettings
from .qsd_integrator import SCHEMES

log = logging.getLogger("qsd_duffing")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_SIMULATION = 3

# levels x steps x trajectories above which --allow-long is required
LONG_RUN_COST = 1e10

QUANTUM_COLUMNS = [
    "beta_sq",
    "gamma",
    "lambda",
    "stderr",
    "kind",
    "n_pairs",
    "periods",
    "rescales_mean",
    "convention",
    "seed",
    "std",
    "n_levels",
    "n_converged",
    "n_bound",
    "wall_time",
    "status",
]
CLASSICAL_COLUMNS = [
    "gamma",
    "g",
    "omega",
    "convention",
    "lambda",
    "periods",
    "transient",
    "dt",
    "x0",
    "p0",
    "status",
]


def _version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            return ""
        return f"{float(value):.9g}"
    return str(value)


class CsvWriter:
    """Single writer for one result table; rows are flushed as they arrive."""

    def __init__(self, path: str | None, columns: list[str]):
        self.path = path
        self.columns = columns
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8", newline="")
        else:
            self._fh = sys.stdout
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(columns)
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._csv.writerow([_fmt(row.get(c)) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not sys.stdout:
            self._fh.close()


def _jsonable(obj):
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items() if k != "trunc"}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if k != "trunc"}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, DampingConvention):
        return obj.value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def write_manifest(out: str | None, command: str, config: dict, started: str) -> dict:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "tool": "qsd-duffing",
        "version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": _jsonable(config),
        "root_seed": config.get("seed"),
        "started": started,
        "finished": _now(),
    }
    if out:
        with open(f"{out}.manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        print("manifest: " + json.dumps(manifest, sort_keys=True), file=sys.stderr)
    return manifest


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ----------------------------------------------------------------------------
# argument parsing


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text!r}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be a non-negative number, got {text!r}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text!r}")
    return value


def _levels(text: str):
    if str(text).lower() == "auto":
        return "auto"
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("levels must be >= 2 or 'auto'")
    return value


def _convention(text: str) -> DampingConvention:
    try:
        return DampingConvention.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _float_list(text: str) -> list[float]:
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    try:
        return [float(t) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_common(p: argparse.ArgumentParser, physics: bool = True) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out", help="CSV output path (default: standard output)")
    p.add_argument("-v", "--verbose", action="store_true", help="progress on standard error")
    if physics:
        p.add_argument("--gamma", type=_nonneg_float, help="damping constant Gamma")
        p.add_argument("--g", type=_nonneg_float, default=0.3, help="drive amplitude")
        p.add_argument("--omega", type=_positive_float, default=1.0, help="drive frequency")
        p.add_argument("--dt", type=_positive_float, default=1e-3, help="time step")
        p.add_argument(
            "--damping-convention",
            type=_convention,
            default=DampingConvention.MEAN_TWO_GAMMA,
            help="MeanTwoGamma (dp/dt = F - 2 Gamma p, default) or MeanGamma",
        )


def _add_quantum(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pairs", type=int, default=16, help="trajectory pairs (>= 2)")
    p.add_argument("--periods", type=_positive_float, default=300, help="accumulation periods")
    p.add_argument("--transient", type=_nonneg_float, default=100, help="transient periods")
    p.add_argument("--levels", type=_levels, default="auto", help="Fock levels or 'auto'")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--delta0", type=_positive_float, default=1e-7, help="initial separation")
    p.add_argument("--dmax-factor", type=_positive_float, default=100.0)
    p.add_argument(
        "--checkpoint-periods", type=_positive_float, default=10.0,
        help="drive periods between lambda(t) checkpoints (20 needed to classify)",
    )
    p.add_argument("--scheme", choices=SCHEMES, default="split")
    p.add_argument("--projective", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--workers", type=_positive_int, help="worker processes (env QSD_WORKERS)")
    p.add_argument(
        "--allow-long", type=_bool, nargs="?", const=True, default=False,
        help="permit runs above the cost guard",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsd-duffing",
        description="Lyapunov exponents of the continuously observed Duffing oscillator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    q = sub.add_parser("quantum-lambda", help="ensemble exponent at one beta^2")
    _add_common(q)
    q.add_argument("--beta2", type=_positive_float, help="inverse system size beta^2")
    _add_quantum(q)

    c = sub.add_parser("classical-lambda", help="classical Benettin exponent")
    _add_common(c)
    c.add_argument("--periods", type=_positive_float, default=5000)
    c.add_argument("--transient", type=_nonneg_float, default=100)
    c.add_argument("--x0", type=float, default=1.0)
    c.add_argument("--p0", type=float, default=0.0)

    s = sub.add_parser("sweep", help="ensemble exponent over a list of beta^2")
    _add_common(s)
    s.add_argument("--beta2-list", type=_float_list, help="comma-separated beta^2 values")
    s.add_argument(
        "--beta2-range", help="START:STOP:COUNT, logarithmically spaced, endpoints included"
    )
    s.add_argument("--plot-data", help="two-column-plus-error file (default: <out>.plot.dat)")
    _add_quantum(s)

    v = sub.add_parser("validate", help="run the built-in oracle checks")
    v.add_argument("--config", help="key = value file; flags override it")
    v.add_argument("--quick", type=_bool, nargs="?", const=True, default=False)
    v.add_argument("--only", help="comma-separated subset of checks")
    v.add_argument("--dt", type=_positive_float, help="override the integration step")
    v.add_argument("-v", "--verbose", action="store_true")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        conv = action.type or str
        try:
            value = conv(text)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv: list[str]) -> tuple[argparse.Namespace, argparse.ArgumentParser]:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        try:
            _apply_config(sub, read_config_file(args.config))
        except UsageError as exc:
            sub.error(str(exc))
        args = parser.parse_args(argv)
    return args, sub


# ----------------------------------------------------------------------------
# commands


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get("QSD_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"QSD_WORKERS must be a positive integer, got {env!r}")
        if value <= 0:
            raise UsageError(f"QSD_WORKERS must be a positive integer, got {env!r}")
        return value
    return 1


def _base_config(args, beta_sq: float, n_levels: int = 32) -> DuffingConfig:
    try:
        return DuffingConfig(
            beta_sq=beta_sq,
            gamma=args.gamma,
            g=args.g,
            omega_drive=args.omega,
            damping_convention=args.damping_convention,
            n_levels=n_levels,
            dt=args.dt,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _ensemble_config(args, base: DuffingConfig) -> EnsembleConfig:
    if args.pairs < 2:
        raise UsageError("--pairs must be at least 2")
    try:
        settings = LyapunovSettings(
            delta0=args.delta0,
            dmax_factor=args.dmax_factor,
            checkpoint_periods=args.checkpoint_periods,
            scheme=args.scheme,
            projective=args.projective,
        )
        return EnsembleConfig.from_periods(
            base,
            args.periods,
            args.transient,
            n_pairs=args.pairs,
            root_seed=args.seed,
            delta0=args.delta0,
            settings=settings,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _guard(args, beta_sq: float) -> None:
    levels = args.levels if args.levels != "auto" else estimate_levels(beta_sq)
    cost = estimated_cost(beta_sq, args.pairs, args.periods + args.transient, args.dt, levels)
    if cost > LONG_RUN_COST and not args.allow_long:
        raise UsageError(
            f"beta2={beta_sq:g} needs about {levels} Fock levels; estimated cost {cost:.2g} "
            f"(levels x steps x trajectories) exceeds {LONG_RUN_COST:.0e}. This point "
            "requires long-run mode (--allow-long); a moving-frame basis would shrink it."
        )


def _quantum_row(args, beta_sq: float, n_levels, result=None, error=None) -> dict:
    row = {
        "beta_sq": beta_sq,
        "gamma": args.gamma,
        "n_pairs": args.pairs,
        "periods": args.periods,
        "convention": args.damping_convention.value,
        "seed": args.seed,
        "n_levels": n_levels,
    }
    if result is not None:
        row.update(
            {
                "lambda": result.value,
                "stderr": result.stderr,
                "std": result.std,
                "kind": result.kind.value,
                "rescales_mean": result.rescales_mean,
                "n_converged": result.n_converged,
                "n_bound": result.n_bound,
                "wall_time": result.wall_time,
                "status": "ok" if not result.failures else f"ok ({len(result.failures)} pairs failed)",
            }
        )
    else:
        row["status"] = f"error: {error}"
    return row


def _run_config(args, **extra) -> dict:
    keys = (
        "gamma", "g", "omega", "dt", "damping_convention", "pairs", "periods", "transient",
        "levels", "seed", "delta0", "dmax_factor", "checkpoint_periods", "scheme",
        "projective",
    )
    cfg = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    cfg.update(extra)
    return cfg


def cmd_quantum_lambda(args) -> int:
    if args.gamma is None or args.beta2 is None:
        raise UsageError("--gamma and --beta2 are required")
    _guard(args, args.beta2)
    workers = _workers(args)
    started = _now()
    base = _base_config(args, args.beta2)
    ens = _ensemble_config(args, base)
    n_levels = args.levels
    if n_levels == "auto":
        n_levels = auto_levels(base, settings=ens.settings)
        log.info("auto-selected %d Fock levels", n_levels)
    ens = EnsembleConfig.from_periods(
        base.with_(n_levels=n_levels),
        args.periods,
        args.transient,
        n_pairs=ens.n_pairs,
        root_seed=ens.root_seed,
        delta0=ens.delta0,
        settings=ens.settings,
    )

    def progress(i, res):
        log.info("pair %d done: %s", i, getattr(res, "final_lambda", res))

    result = run_ensemble(ens, workers=workers, progress=progress)
    writer = CsvWriter(args.out, QUANTUM_COLUMNS)
    writer.write(_quantum_row(args, args.beta2, n_levels, result))
    writer.close()
    write_manifest(
        args.out,
        "quantum-lambda",
        _run_config(args, beta_sq=args.beta2, n_levels=n_levels, workers=workers),
        started,
    )
    return EXIT_OK


def cmd_classical_lambda(args) -> int:
    if args.gamma is None:
        raise UsageError("--gamma is required")
    started = _now()
    cfg = _base_config(args, 1.0)
    T = cfg.drive_period
    try:
        lam = benettin_lyapunov(
            cfg,
            (args.transient + args.periods) * T,
            args.transient * T,
            x0=args.x0,
            p0=args.p0,
            min_periods=min(1000, args.periods),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    row = {
        "gamma": args.gamma,
        "g": args.g,
        "omega": args.omega,
        "convention": args.damping_convention.value,
        "lambda": lam,
        "periods": args.periods,
        "transient": args.transient,
        "dt": args.dt,
        "x0": args.x0,
        "p0": args.p0,
        "status": "ok",
    }
    if args.out:
        print(_fmt(lam))
    writer = CsvWriter(args.out, CLASSICAL_COLUMNS)
    writer.write(row)
    writer.close()
    write_manifest(
        args.out,
        "classical-lambda",
        _run_config(args, x0=args.x0, p0=args.p0),
        started,
    )
    return EXIT_OK


def _beta_values(args) -> list[float]:
    if args.beta2_list is not None and args.beta2_range:
        raise UsageError("give either --beta2-list or --beta2-range, not both")
    if args.beta2_list is not None:
        values = args.beta2_list
    elif args.beta2_range:
        try:
            start, stop, count = args.beta2_range.split(":")
            start, stop, count = float(start), float(stop), int(count)
        except ValueError:
            raise UsageError("--beta2-range must look like START:STOP:COUNT") from None
        if not (start > 0 and stop > 0 and count >= 1):
            raise UsageError("--beta2-range needs positive endpoints and COUNT >= 1")
        values = list(np.geomspace(start, stop, count)) if count > 1 else [start]
    else:
        raise UsageError("--beta2-list or --beta2-range is required")
    if not values:
        raise UsageError("--beta2-list is empty")
    bad = [v for v in values if not v > 0]
    if bad:
        raise UsageError(f"beta^2 values must be positive, got {bad}")
    return [float(v) for v in values]


def cmd_sweep(args) -> int:
    if args.gamma is None:
        raise UsageError("--gamma is required")
    values = _beta_values(args)
    for b2 in values:
        _guard(args, b2)
    workers = _workers(args)
    started = _now()
    ens = _ensemble_config(args, _base_config(args, values[0]))
    levels = None if args.levels == "auto" else args.levels

    plot_path = args.plot_data or (f"{args.out}.plot.dat" if args.out else None)
    plot_fh = None
    if plot_path:
        plot_fh = open(plot_path, "w", encoding="utf-8", newline="\n")
        plot_fh.write("# beta_sq lambda stderr\n")
    writer = CsvWriter(args.out, QUANTUM_COLUMNS)
    n_ok = 0
    used_levels = {}
    try:
        for point in sweep_beta(ens, values, levels=levels, workers=workers):
            used_levels[point.beta_sq] = point.n_levels
            if point.ok:
                n_ok += 1
                writer.write(_quantum_row(args, point.beta_sq, point.n_levels, point.result))
                if plot_fh:
                    plot_fh.write(
                        f"{_fmt(point.beta_sq)} {_fmt(point.result.value)} "
                        f"{_fmt(point.result.stderr)}\n"
                    )
                    plot_fh.flush()
            else:
                log.warning("beta2=%g failed: %s", point.beta_sq, point.error)
                writer.write(_quantum_row(args, point.beta_sq, point.n_levels, error=point.error))
    finally:
        writer.close()
        if plot_fh:
            plot_fh.close()
    write_manifest(
        args.out,
        "sweep",
        _run_config(args, beta_sq=values, n_levels=used_levels, workers=workers),
        started,
    )
    return EXIT_OK if n_ok >= 1 else EXIT_SIMULATION


def cmd_validate(args) -> int:
    from .validation import CHECKS, run_checks

    names = None
    if args.only:
        names = [n.strip() for n in args.only.split(",") if n.strip()]
        unknown = [n for n in names if n not in CHECKS]
        if unknown or not names:
            raise UsageError(f"unknown checks {unknown}; available: {', '.join(CHECKS)}")
    results = run_checks(
        names, quick=args.quick, dt=args.dt, report=lambda r: print(r.line(), flush=True)
    )
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


COMMANDS = {
    "quantum-lambda": cmd_quantum_lambda,
    "classical-lambda": cmd_classical_lambda,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, sub = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"{sub.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QSDError as exc:
        print(f"simulation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
