"""Command-line interface.

Subcommands: coeffs (derive/print schemes), stability (root-condition
verdicts), solve (one backward solve), convergence (an (N, M) ladder with
batch CIs), stability-demo (error-vs-N classification).  A key=value config
file can preload any flag; explicit flags win.  Exit codes: 0 success,
2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .exceptions import NumericalError, ValidationError
from .experiments import (
    PAPER_LADDER,
    TrialLadder,
    emit_report,
    run_ladder,
    stability_demo,
)
from .problems import example1, example2, exponential_ode
from .schemes import load_scheme, preset_scheme, scheme_to_json
from .simulation import GridSpec, sample_ensemble
from .solver import SolverConfig, result_to_dict, solve
from .stability import scheme_verdict, verdict_to_dict

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _int_list(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _bool(text):
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


# converters applied to config-file values, keyed by destination name
_CONVERTERS = {
    "steps": int, "N": _int_list, "M": _int_list, "batches": int,
    "seed": int, "basis_degree": int, "dim": int, "eta": float, "T": float,
    "tol": float, "deterministic": _bool, "allow_unstable": _bool,
    "paper_ladder": _bool,
}


def read_config(path) -> dict:
    """key=value lines; '#' starts a comment; keys match the long flag names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--steps", type=int, default=None, help="scheme step count m")
    parser.add_argument("--family", choices=("stable", "adams", "unstable"), default=None,
                        help="built-in scheme family (default stable)")
    parser.add_argument("--scheme-file", default=None,
                        help="JSON scheme file; overrides --steps/--family")
    parser.add_argument("--problem", default=None,
                        choices=("example1", "example2", "exponential-ode"))
    parser.add_argument("--eta", type=float, default=None, help="example1 parameter")
    parser.add_argument("--tau", default=None,
                        help="example1 parameter; 'auto' means 1/sqrt(dim)")
    parser.add_argument("--dim", type=int, default=None, help="example1 dimension")
    parser.add_argument("--T", type=float, default=None, help="horizon override")
    parser.add_argument("--N", default=None, help="time steps (comma list allowed)")
    parser.add_argument("--M", default=None, help="trajectories (comma list allowed)")
    parser.add_argument("--batches", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--basis-degree", type=int, default=None, dest="basis_degree")
    parser.add_argument("--deterministic", action="store_const", const=True, default=None)
    parser.add_argument("--allow-unstable", action="store_const", const=True,
                        default=None, dest="allow_unstable")
    parser.add_argument("--out", default=None, help="output path (default stdout)")
    parser.add_argument("--format", default=None, choices=("csv", "json"))
    parser.add_argument("--tol", type=float, default=None, help="stability tolerance")


_DEFAULTS = {
    "family": "stable", "steps": 2, "problem": "example1",
    "eta": 0.6, "tau": "auto", "dim": 2, "batches": 21, "seed": 0,
    "basis_degree": 2, "deterministic": False, "allow_unstable": False,
    "tol": 1e-8, "N": [20], "M": [10000],
}


def _merge_config(args) -> argparse.Namespace:
    layered = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            conv = _CONVERTERS.get(key, str)
            layered[key] = conv(value)
    for key, value in vars(args).items():
        if value is None and key in layered:
            setattr(args, key, layered[key])
    for key in ("N", "M"):
        if hasattr(args, key) and isinstance(getattr(args, key), str):
            setattr(args, key, _int_list(getattr(args, key)))
    return args


def _build_scheme(args):
    if args.scheme_file:
        return load_scheme(args.scheme_file)
    return preset_scheme(args.family, args.steps)


def _build_problem(args):
    name = args.problem
    if name == "example1":
        tau = None if str(args.tau) == "auto" else float(args.tau)
        kwargs = {"eta": args.eta, "tau": tau, "d": args.dim}
        if args.T is not None:
            kwargs["T"] = args.T
        return example1(**kwargs)
    if name == "example2":
        return example2() if args.T is None else example2(T=args.T)
    if name == "exponential-ode":
        return exponential_ode() if args.T is None else exponential_ode(T=args.T)
    raise ValidationError(f"unknown problem {name!r}")


def _emit_text(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_coeffs(args) -> int:
    scheme = _build_scheme(args)
    _emit_text(scheme_to_json(scheme) + "\n", args.out)
    return EXIT_OK


def cmd_stability(args) -> int:
    if getattr(args, "scheme", None):
        scheme = load_scheme(args.scheme)
    else:
        scheme = _build_scheme(args)
    verdict = scheme_verdict(scheme, tol=args.tol)
    _emit_text(json.dumps(verdict_to_dict(verdict), indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    scheme = _build_scheme(args)
    problem = _build_problem(args)
    N = args.N[0]
    config = SolverConfig(
        scheme=scheme, grid=GridSpec(T=problem.T, N=N),
        basis_degree=args.basis_degree, deterministic=args.deterministic,
        allow_unstable=args.allow_unstable, stability_tol=args.tol,
    )
    start = time.perf_counter()
    if args.deterministic:
        solution = solve(problem, config)
    else:
        ensemble = sample_ensemble(problem, config.grid, args.M[0], args.seed)
        solution = solve(problem, config, ensemble)
    runtime = time.perf_counter() - start
    _emit_text(json.dumps(result_to_dict(solution, runtime), indent=2) + "\n", args.out)
    return EXIT_OK


def _ladder_pairs(args):
    if getattr(args, "paper_ladder", False):
        return PAPER_LADDER
    Ns, Ms = args.N, args.M
    if len(Ms) == 1:
        Ms = Ms * len(Ns)
    if len(Ns) != len(Ms):
        raise ValidationError("--N and --M lists must pair up (or give one M)")
    return tuple(zip(Ns, Ms))


def cmd_convergence(args) -> int:
    scheme = _build_scheme(args)
    problem = _build_problem(args)
    ladder = TrialLadder(
        problem=problem, scheme=scheme, pairs=_ladder_pairs(args),
        batches=args.batches, base_seed=args.seed, basis_degree=args.basis_degree,
        deterministic=args.deterministic, allow_unstable=args.allow_unstable,
    )
    report = run_ladder(ladder)
    if args.out:
        formats = ("csv", "json") if args.format is None else (args.format,)
        written = emit_report(report, args.out, formats=formats)
        sys.stdout.write("".join(f"wrote {p}\n" for p in written))
    else:
        if args.format == "json":
            sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
        else:
            from .experiments import report_csv
            sys.stdout.write(report_csv(report))
    return EXIT_OK


def cmd_stability_demo(args) -> int:
    scheme = _build_scheme(args)
    problem = _build_problem(args)
    result = stability_demo(problem, scheme, args.N, args.M[0], args.seed,
                            deterministic=args.deterministic,
                            basis_degree=args.basis_degree)
    doc = {
        "scheme": scheme.name or f"{scheme.m}-step",
        "rows": [{"N": n, "err_y": e} for n, e in zip(result.Ns, result.errors)],
        "classification": result.classification,
    }
    _emit_text(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbsde-pc",
        description="Multi-step predictor-corrector solver for decoupled FBSDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="derive and print scheme coefficients")
    _add_common(p)
    p.set_defaults(handler=cmd_coeffs)

    p = sub.add_parser("stability", help="root-condition verdict for a scheme")
    p.add_argument("--scheme", default=None, help="scheme JSON file")
    _add_common(p)
    p.set_defaults(handler=cmd_stability)

    p = sub.add_parser("solve", help="single backward solve")
    _add_common(p)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("convergence", help="run an (N, M) ladder with batch CIs")
    p.add_argument("--paper-ladder", action="store_const", const=True, default=None,
                   dest="paper_ladder", help="use the published (N, M) pairs")
    _add_common(p)
    p.set_defaults(handler=cmd_convergence)

    p = sub.add_parser("stability-demo", help="errors vs N for a scheme")
    _add_common(p)
    p.set_defaults(handler=cmd_stability_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args)
        return args.handler(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
