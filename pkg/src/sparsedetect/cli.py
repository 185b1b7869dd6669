"""Command-line front end: ``solve``, ``test`` and ``sweep``.

Exit codes
----------
0   success (``test``: computed and rejected)
1   ``test`` only: computed, not rejected
2   infeasible extremal problem
3   solver did not converge
64  usage error (missing or malformed flags)
65  malformed input data file
73  output directory cannot be written
78  configuration file violates the schema
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import ConfigError, ConvergenceError, InfeasibleError, SparseDetectError
from .extremal import ExtremalParams, brute_force_extremal, separation_rate, solve_extremal
from .model import (
    ActiveSetMode,
    Profile,
    ProblemConfig,
    SignMode,
    least_favorable_signal,
    make_active_set,
    null_signal,
    read_csv,
    synthesize,
)
from .montecarlo import (
    SignalSpec,
    alpha_sweep,
    boundary_scan,
    chi2_spec,
    hc_spec,
    power_curve,
    sweep_csv_text,
    write_manifest,
)
from .stats import EMPIRICAL_MC, GAUSSIAN_APPROX, T_d, TestConfig, TestOutcome, t_statistic, vector_hc_baseline

EXIT_OK = 0
EXIT_NO_REJECT = 1
EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_CANTCREAT = 73
EXIT_CONFIG = 78

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class DataError(Exception):
    """Malformed observation file given to ``test --input``."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _print_table(pairs, out):
    width = max((len(k) for k, _ in pairs), default=0)
    for key, value in pairs:
        print(f"{key.ljust(width)}  {_fmt(value)}", file=out)


# solve ---------------------------------------------------------------------------

def cmd_solve(args, out=sys.stdout):
    p = ExtremalParams(args.r, args.eps, args.tau)
    try:
        sol = solve_extremal(p, args.tol)
    except InfeasibleError as exc:
        print(f"infeasible: {exc.constraint}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"no convergence: {exc} {exc.residuals}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    rows = [
        ("a", sol.a),
        ("v0", sol.v0),
        ("m", sol.m),
        ("kmax", sol.kmax),
        ("max_w", sol.max_weight),
        ("sum_w2", float(np.sum(sol.weights**2))),
        ("residual_l2", sol.residuals["l2"]),
        ("residual_sobolev", sol.residuals["sobolev"]),
    ]
    if args.brute_force_check:
        try:
            bf = brute_force_extremal(p, 4 * sol.kmax)
        except ConvergenceError as exc:
            print(f"no convergence: brute force {exc}", file=sys.stderr)
            return EXIT_NO_CONVERGENCE
        rows += [("a_brute_force", bf), ("relative_gap", abs(sol.a - bf) / bf)]
    _print_table(rows, out)
    return EXIT_OK


# test ----------------------------------------------------------------------------

def _test_config(args):
    tail = GAUSSIAN_APPROX if args.tail_mode == "gaussian" else EMPIRICAL_MC(args.tail_n0)
    delta = args.delta if args.delta == "auto" else float(args.delta)
    return TestConfig(alpha=args.alpha, C_exponent=args.C_exponent, D=args.D, delta=delta,
                      tail_mode=tail, combine=args.combine, tail_seed=args.tail_seed)


def _load_observations(path, cfg):
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline()
        ncols = len(header.rstrip("\r\n").split(","))
        if ncols < 3 or ncols % 2 == 0:
            raise ConfigError(f"header has {ncols} columns; expected j plus 2*kmax frequency columns",
                              field="row 1")
        fh.seek(0)
        return read_csv(fh, cfg.replace(kmax=(ncols - 1) // 2))


def cmd_test(args, out=sys.stdout):
    tc = _test_config(args)
    base = ProblemConfig(d=args.d, b=args.b, eps=args.eps, tau=args.tau, r=args.r, kmax=1)
    if args.test == "chi2":
        spec = chi2_spec(base, args.alpha)
    else:
        spec = hc_spec(base, tc)
    kmax = spec.kmax
    sol = None
    if args.r > 0 and not args.input:
        sol = solve_extremal(ExtremalParams(args.r, args.eps, args.tau))
        kmax = max(kmax, sol.kmax)
    if args.kmax:
        kmax = max(kmax, args.kmax)
    cfg = base.replace(kmax=kmax)
    if args.input:
        try:
            obs = _load_observations(args.input, cfg)
        except ConfigError as exc:
            raise DataError(f"{exc.field}: {exc}") from None
        except OSError as exc:
            raise DataError(f"cannot read {args.input}: {exc.strerror}") from None
        if obs.config.kmax < spec.kmax:
            raise DataError(f"row 1: input has kmax={obs.config.kmax} but the test weights need kmax={spec.kmax}")
    else:
        if sol is None:
            signal = null_signal(cfg)
        else:
            xi = make_active_set(cfg.d, cfg.b, ActiveSetMode(args.active), args.seed)
            signal = least_favorable_signal(cfg, sol, xi, SignMode(args.sign_mode), args.seed)
        obs = synthesize(signal, cfg, args.seed)
    if args.test == "chi2":
        outcome = spec(obs)
    elif args.test == "hc":
        outcome = spec(obs)
    else:
        # the vector baseline applied to the per-component statistics t_j
        w = spec.solutions[-1].weights
        t = t_statistic(obs.x, w, cfg.eps)
        stat = vector_hc_baseline(t, args.s0)
        H = tc.H(cfg.d)
        outcome = TestOutcome(stat, H, stat > H, name="vector-hc", detail={"s0": args.s0})
    rec = outcome.to_record()
    rec["seed"] = args.seed
    _print_table(list(rec.items()), out)
    return EXIT_OK if outcome.reject else EXIT_NO_REJECT


# sweep ---------------------------------------------------------------------------

_TEST_FIELDS = {
    "kind": str, "alpha": float, "C_exponent": float, "D": float, "delta": (str, float),
    "tail_mode": str, "tail_n0": int, "combine": str, "tail_seed": int,
}
_SIGNAL_FIELDS = {"kind": str, "sign_mode": str, "active": str, "profile_ratio": float, "seed": int}
_PROBLEM_FIELDS = {"d": int, "b": float, "eps": float, "tau": float}
_SWEEP_FIELDS = {
    "power": {"ratios": list},
    "boundary": {"b_values": list, "c_values": list, "c_relative_to_phi": bool},
    "alpha": {"alphas": list},
}


def _typed(value, kind, path):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    for k in kinds:
        if k is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if k is int and isinstance(value, int) and not isinstance(value, bool):
            return value
        if k is bool and isinstance(value, bool):
            return value
        if k in (str, list) and isinstance(value, k):
            return value
    names = "/".join(k.__name__ for k in kinds)
    raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}", field=path)


def _section(doc, name, fields):
    if name not in doc or not isinstance(doc[name], dict):
        raise ConfigError(f"{name}: missing section", field=name)
    sec = doc[name]
    extra = set(sec) - set(fields)
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"{name}.{key}: unknown field", field=f"{name}.{key}")
    out = {}
    for key, kind in fields.items():
        if key not in sec:
            raise ConfigError(f"{name}.{key}: required field missing", field=f"{name}.{key}")
        out[key] = _typed(sec[key], kind, f"{name}.{key}")
    return out


def _numbers(values, path):
    if not values:
        raise ConfigError(f"{path}: must be a nonempty list", field=path)
    return [_typed(v, float, f"{path}[{i}]") for i, v in enumerate(values)]


def load_sweep_config(path, kind, reps=None, seed=None):
    """Validate a sweep configuration file against the schema.

    Every field is required; ``reps`` and ``seed`` from the command line
    override the file values.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="<file>") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", field="<file>") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object", field="<root>")
    allowed = {"schema_version", "problem", "test", "signal", "sweep", "reps", "seed"}
    extra = set(doc) - allowed
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"{key}: unknown field", field=key)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: must be {SCHEMA_VERSION}", field="schema_version")
    cfg = {
        "schema_version": SCHEMA_VERSION,
        "problem": _section(doc, "problem", _PROBLEM_FIELDS),
        "test": _section(doc, "test", _TEST_FIELDS),
        "signal": _section(doc, "signal", _SIGNAL_FIELDS),
        "sweep": _section(doc, "sweep", _SWEEP_FIELDS[kind]),
    }
    for key in ("reps", "seed"):
        if key not in doc:
            raise ConfigError(f"{key}: required field missing", field=key)
        cfg[key] = _typed(doc[key], int, key)
    if reps is not None:
        cfg["reps"] = reps
    if seed is not None:
        cfg["seed"] = seed
    if cfg["reps"] < 100:
        raise ConfigError(f"reps: must be >= 100, got {cfg['reps']}", field="reps")
    for key in cfg["sweep"]:
        if isinstance(cfg["sweep"][key], list):
            cfg["sweep"][key] = _numbers(cfg["sweep"][key], f"sweep.{key}")
    t = cfg["test"]
    if t["kind"] not in ("chi2", "hc"):
        raise ConfigError("test.kind: must be 'chi2' or 'hc'", field="test.kind")
    if kind == "boundary" and t["kind"] != "hc":
        raise ConfigError("test.kind: boundary sweeps use the 'hc' test", field="test.kind")
    if kind == "alpha" and t["kind"] != "chi2":
        raise ConfigError("test.kind: alpha sweeps use the 'chi2' test", field="test.kind")
    if isinstance(t["delta"], str) and t["delta"] != "auto":
        raise ConfigError("test.delta: must be 'auto' or a positive number", field="test.delta")
    if t["tail_mode"] not in ("gaussian", "empirical"):
        raise ConfigError("test.tail_mode: must be 'gaussian' or 'empirical'", field="test.tail_mode")
    if kind == "power" and cfg["sweep"]["ratios"] != sorted(cfg["sweep"]["ratios"]):
        raise ConfigError("sweep.ratios: must be sorted ascending", field="sweep.ratios")
    return cfg


def _build(cfg):
    p = cfg["problem"]
    problem = _wrap(lambda: ProblemConfig(d=p["d"], b=p["b"], eps=p["eps"], tau=p["tau"], r=0.0, kmax=1),
                    "problem")
    t = cfg["test"]
    tail = GAUSSIAN_APPROX if t["tail_mode"] == "gaussian" else EMPIRICAL_MC(t["tail_n0"])
    tc = _wrap(lambda: TestConfig(alpha=t["alpha"], C_exponent=t["C_exponent"], D=t["D"], delta=t["delta"],
                                  tail_mode=tail, combine=t["combine"], tail_seed=t["tail_seed"]), "test")
    s = cfg["signal"]
    signal = _wrap(lambda: SignalSpec(kind=s["kind"], sign_mode=SignMode(s["sign_mode"]),
                                      active=ActiveSetMode(s["active"]),
                                      profile=Profile(s["profile_ratio"]), seed=s["seed"]), "signal")
    return problem, tc, signal


def _wrap(make, section):
    try:
        return make()
    except ConfigError as exc:
        field = f"{section}.{exc.field}" if exc.field else section
        raise ConfigError(f"{field}: {exc}", field=field) from None
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}", field=section) from None


def _run_sweep(kind, cfg, threads):
    problem, tc, signal = _build(cfg)
    n, seed, sw = cfg["reps"], cfg["seed"], cfg["sweep"]
    if kind == "power":
        spec = chi2_spec(problem, tc.alpha) if cfg["test"]["kind"] == "chi2" else hc_spec(problem, tc)
        return power_curve(spec, problem, sw["ratios"], n, seed, signal, threads)
    if kind == "boundary":
        return boundary_scan(problem, sw["b_values"], sw["c_values"], n, seed, tc, signal, threads,
                             c_relative=sw["c_relative_to_phi"])
    return alpha_sweep(problem, sw["alphas"], n, seed, threads)


def _summary(result, out):
    cols = [c for c in result.columns if c not in ("n", "seed")]
    print("  ".join(f"{c:>12}" for c in cols), file=out)
    for row in result.rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:12.5g}" if isinstance(v, float) else f"{str(v)[:12]:>12}")
        print("  ".join(cells), file=out)


def cmd_sweep(args, out=sys.stdout):
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    cfg = load_sweep_config(args.config, args.kind, args.reps, args.seed)
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, f".write-test-{os.getpid()}")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        print(f"cannot write output directory {args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CANTCREAT
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.time()
    result = _run_sweep(args.kind, cfg, args.threads)
    csv_path = os.path.join(args.out, f"{args.kind}.csv")
    try:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(sweep_csv_text(result))
        write_manifest(
            os.path.join(args.out, f"{args.kind}.manifest.json"),
            command=f"sweep {args.kind}",
            config=cfg,
            seed=cfg["seed"],
            data_file=csv_path,
            started=started,
            finished=datetime.now(timezone.utc).isoformat(),
            extra={"threads": args.threads, "wall_seconds": time.time() - t0,
                   "csv_columns": result.columns},
        )
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CANTCREAT
    _summary(result, out)
    return EXIT_OK


# entry point ------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="sparsedetect", description="Sparse additive signal detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    ps = sub.add_parser("solve", help="solve the extremal problem")
    ps.add_argument("--tau", type=float, required=True)
    ps.add_argument("--eps", type=float, required=True)
    ps.add_argument("--r", type=float, required=True)
    ps.add_argument("--tol", type=float, default=1e-10)
    ps.add_argument("--brute-force-check", action="store_true")

    pt = sub.add_parser("test", help="run one test on synthesized or loaded data")
    for flag in ("--b", "--eps", "--tau", "--r"):
        pt.add_argument(flag, type=float, required=True)
    pt.add_argument("--d", type=int, required=True)
    pt.add_argument("--test", choices=["chi2", "hc", "vector-hc"], required=True)
    pt.add_argument("--seed", type=int, required=True)
    pt.add_argument("--input")
    pt.add_argument("--kmax", type=int, default=0)
    pt.add_argument("--alpha", type=float, default=0.05)
    pt.add_argument("--C-exponent", dest="C_exponent", type=float, default=0.3)
    pt.add_argument("--D", type=float, default=1.6)
    pt.add_argument("--delta", default="auto")
    pt.add_argument("--tail-mode", choices=["gaussian", "empirical"], default="gaussian")
    pt.add_argument("--tail-n0", type=int, default=100_000)
    pt.add_argument("--tail-seed", type=int, default=0)
    pt.add_argument("--combine", choices=["or", "and"], default="or")
    pt.add_argument("--sign-mode", choices=[m.value for m in SignMode], default="plus")
    pt.add_argument("--active", choices=[m.value for m in ActiveSetMode], default="first_k")
    pt.add_argument("--s0", type=float, default=0.0)

    pw = sub.add_parser("sweep", help="Monte Carlo sweeps")
    pw.add_argument("kind", choices=["power", "boundary", "alpha"])
    pw.add_argument("--config", required=True)
    pw.add_argument("--out", required=True)
    pw.add_argument("--seed", type=int)
    pw.add_argument("--reps", type=int)
    pw.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"solve": cmd_solve, "test": cmd_test, "sweep": cmd_sweep}[args.command]
        return handler(args, out)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        if args.command != "sweep":
            print(f"invalid arguments: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"config error at {exc.field or '?'}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc.constraint}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except SparseDetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
