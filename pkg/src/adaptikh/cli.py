"""Command-line front end: ``solve``, ``surface`` and ``compare``, all writing CSV.

Every CSV starts with ``#`` lines echoing the full configuration. Values are
printed with 17 significant digits and LF line endings, so outputs are
byte-stable for a fixed configuration. Wall-clock times are written only with
``--timing``, which is the one setting that makes outputs vary between runs.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .driver import (
    _Krylov,
    adaptive_solve,
    error_surface_row,
    functional_surface_row,
    hybrid_solve,
)
from .problems import add_noise, make_blur_problem, make_gravity_problem
from .rules import DEFAULT_STOP, RuleError, RuleKind, StopRule, check_pairing

THREADS_ENV = "ADAPTIKH_THREADS"
SURFACE_TYPES = ("error", "dp", "gcv", "qo", "reginska")
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    g = p.add_argument_group("problem")
    g.add_argument("--config", help="key=value file; explicit flags override it")
    g.add_argument("--problem", choices=("blur", "gravity"), default="blur")
    g.add_argument("--size", type=int, default=64, help="image side (blur) or n (gravity)")
    g.add_argument("--psf-sigma", type=float, default=4.0)
    g.add_argument("--band", type=int, default=12)
    g.add_argument("--depth", type=float, default=0.25)
    g.add_argument("--noise", type=float, default=1e-2)
    g.add_argument("--seed", type=int, default=0)
    g = p.add_argument_group("solver")
    g.add_argument("--rule", choices=[r.value for r in RuleKind], default="dp")
    g.add_argument("--stop", choices=[s.value for s in StopRule], default=None)
    g.add_argument("--tau", type=float, default=1e-2)
    g.add_argument("--maxit", type=int, default=200)
    g.add_argument("--init", type=float, default=1e-10, help="beta_1 for dp, alpha_1 otherwise")
    g = p.add_argument_group("grid")
    g.add_argument("--alpha-min", type=float, default=1e-6)
    g.add_argument("--alpha-max", type=float, default=1.0)
    g.add_argument("--alpha-count", type=int, default=50)
    g.add_argument("--kmax", type=int, default=150)
    g = p.add_argument_group("output")
    g.add_argument("--out", default=".")
    g.add_argument("--timing", action="store_true", help="record wall_ms (breaks byte-stability)")
    g.add_argument("--withhold-exact", action="store_true", help="leave the rre column empty")


def build_parser():
    parser = _Parser(prog="adaptikh", description="Adaptive Tikhonov regularization in Krylov subspaces.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("solve", help="run the adaptive solver and write trace.csv and solution.csv")
    _add_common(p)
    p = sub.add_parser("surface", help="write (alpha, k) surfaces and markers.csv")
    _add_common(p)
    p.add_argument("--surfaces", default="error,dp,gcv,qo,reginska", help="comma list of " + "|".join(SURFACE_TYPES))
    p = sub.add_parser("compare", help="write compare.csv: adaptive vs hybrid vs grid optimum per k")
    _add_common(p)
    p.add_argument("--rules", default="dp,gcv,qo,reginska", help="comma list of rules")
    return parser


def _convert(action, raw):
    if isinstance(action, argparse._StoreTrueAction):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"expected a boolean for {action.dest}, got {raw!r}")
        return low in ("true", "1", "yes")
    value = action.type(raw) if action.type else raw
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"invalid value {raw!r} for {action.dest}")
    return value


def read_config(path, subparser):
    """Parse a key=value file into defaults for ``subparser``. Unknown keys are errors."""
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[dest] = _convert(actions[dest], raw)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from exc
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**read_config(args.config, subparser))
        args = parser.parse_args(argv)
    return args


def validate(args):
    if args.stop is not None:
        try:
            check_pairing(args.rule, args.stop)
        except RuleError as exc:
            raise UsageError(str(exc)) from exc
    for name in ("tau", "init", "alpha_min", "alpha_max"):
        if not getattr(args, name) > 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.alpha_min >= args.alpha_max:
        raise UsageError("--alpha-min must be below --alpha-max")
    for name in ("maxit", "alpha_count", "kmax", "size"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be at least 1")
    if args.noise < 0:
        raise UsageError("--noise must be nonnegative")
    if args.command == "surface":
        kinds = _split(args.surfaces)
        bad = [s for s in kinds if s not in SURFACE_TYPES]
        if bad or not kinds:
            raise UsageError(f"--surfaces must list some of {', '.join(SURFACE_TYPES)}")
    if args.command == "compare":
        kinds = _split(args.rules)
        bad = [r for r in kinds if r not in {k.value for k in RuleKind}]
        if bad or not kinds:
            raise UsageError("--rules must list at least one of dp, gcv, qo, reginska")


def _split(s):
    return [t.strip() for t in s.split(",") if t.strip()]


def config_items(args):
    # the output location is not part of the experiment
    return sorted((k, v) for k, v in vars(args).items() if k not in ("config", "out"))


def make_problem(args):
    if args.problem == "blur":
        base = make_blur_problem(args.size, args.psf_sigma, args.band)
    else:
        base = make_gravity_problem(args.size, args.depth)
    return add_noise(base, args.noise, args.seed)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def write_csv(path, args, header, rows):
    lines = [f"# {k}={'' if v is None else v}" for k, v in config_items(args)]
    if header:
        lines.append(",".join(header))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"{THREADS_ENV} must be a positive integer") from exc
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer")
    return n


def _adaptive(args, problem, rule=None, stop=None):
    rule = rule or args.rule
    return adaptive_solve(
        problem,
        rule,
        stop_rule=stop,
        tau=args.tau,
        maxit=args.maxit,
        init=args.init,
        track_rre=not args.withhold_exact,
    )


def cmd_solve(args, out):
    problem = make_problem(args)
    report = _adaptive(args, problem, stop=args.stop)
    rows = [
        (t.k, t.alpha, t.value, t.d1, t.metric, t.rre, t.wall_ms if args.timing else None)
        for t in report.trace
    ]
    write_csv(out / "trace.csv", args, ["k", "param_alpha", "Pk_value", "dPk", "stop_metric", "rre", "wall_ms"], rows)
    x = report.x
    grid = x.reshape(args.size, args.size) if args.problem == "blur" else x[:, None]
    write_csv(out / "solution.csv", args, None, [tuple(r) for r in grid])
    final_rre = None if args.withhold_exact else report.trace[-1].rre if report.trace else None
    print(
        f"k={report.k_final} alpha={report.alpha_final:.6g} "
        f"rre={'n/a' if final_rre is None else f'{final_rre:.6g}'} stopped_by={report.stopped_by}"
    )
    return report


def _alphas(args):
    return np.logspace(math.log10(args.alpha_min), math.log10(args.alpha_max), args.alpha_count)


def _krylov_rows(args, problem, kmax, fn):
    """Evaluate ``fn(k, rules, fact)`` for k = 1..kmax on one shared factorization."""
    kry = _Krylov(problem.operator, problem.b_noisy, True)
    rules = []
    while len(rules) < kmax:
        r = kry.advance()
        if r.k == len(rules):
            break
        rules.append(r)
    fact = kry.fact
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(lambda r: fn(r.k, r, fact), rules))
    return rows


def cmd_surface(args, out):
    problem = make_problem(args)
    alphas = _alphas(args)
    kinds = _split(args.surfaces)
    if args.withhold_exact and "error" in kinds:
        raise UsageError("the error surface needs the exact solution")

    def row(k, rules, fact):
        res = {}
        for kind in kinds:
            if kind == "error":
                res[kind] = error_surface_row(fact, k, alphas, problem.x_exact)
            else:
                res[kind] = functional_surface_row(kind, rules, alphas)
        return res

    rows = _krylov_rows(args, problem, args.kmax, row)
    for kind in kinds:
        data = [(a, k, z) for k, r in enumerate(rows, 1) for a, z in zip(alphas, r[kind])]
        write_csv(out / f"surface_{kind}.csv", args, ["alpha", "k", "z"], data)

    markers = []
    adaptive = _adaptive(args, problem, stop=args.stop)
    markers += [("adaptive", t.k, t.alpha, t.rre) for t in adaptive.trace]
    hybrid = hybrid_solve(problem, args.rule, tau_outer=None, maxit=min(args.kmax, args.maxit), track_rre=not args.withhold_exact)
    markers += [("hybrid", t.k, t.alpha, t.rre) for t in hybrid.trace]
    if not args.withhold_exact:
        if "error" in kinds:
            err = [r["error"] for r in rows]
        else:
            err = _krylov_rows(args, problem, args.kmax, lambda k, _r, f: error_surface_row(f, k, alphas, problem.x_exact))
        for k, e in enumerate(err, 1):
            i = int(np.argmin(e))
            markers.append(("optimal", k, alphas[i], e[i]))
    write_csv(out / "markers.csv", args, ["series", "k", "alpha", "rre"], markers)
    print(f"wrote {len(kinds)} surface(s) over k=1..{len(rows)} and {len(markers)} markers")


def cmd_compare(args, out):
    if args.withhold_exact:
        raise UsageError("compare needs the exact solution")
    problem = make_problem(args)
    alphas = _alphas(args)
    rows = []
    for rule in _split(args.rules):
        ad = _adaptive(args, problem, rule=rule, stop=DEFAULT_STOP[RuleKind(rule)])
        K = len(ad.trace)
        hy = hybrid_solve(problem, rule, tau_outer=None, maxit=K)
        hy_by_k = {t.k: t for t in hy.trace}
        # reuse the adaptive factorization: GKB data do not depend on the rule
        fact = ad.factorization
        for t in ad.trace:
            h = hy_by_k.get(t.k)
            e = error_surface_row(fact, t.dim, alphas, problem.x_exact)
            i = int(np.argmin(e))
            rows.append(
                (
                    rule,
                    t.k,
                    t.alpha,
                    None if h is None else h.alpha,
                    alphas[i],
                    t.rre,
                    None if h is None else h.rre,
                    e[i],
                )
            )
        print(f"{rule}: adaptive stopped at k={K} ({ad.stopped_by}), alpha={ad.alpha_final:.6g}")
    header = ["rule", "k", "alpha_adaptive", "alpha_hybrid", "alpha_optimal", "rre_adaptive", "rre_hybrid", "rre_optimal"]
    write_csv(out / "compare.csv", args, header, rows)


COMMANDS = {"solve": cmd_solve, "surface": cmd_surface, "compare": cmd_compare}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        validate(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"adaptikh: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuleError as exc:
        print(f"adaptikh: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every module error maps to exit 1
        print(f"adaptikh: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
