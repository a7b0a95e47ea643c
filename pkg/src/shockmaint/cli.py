"""Command-line entry point.

Every subcommand prints a short summary on stdout and, given ``--out``, writes
its artifacts plus a ``manifest.json`` that ``rerun`` can replay. Errors go to
stderr as one line of JSON; exit codes are 0 ok, 1 validation, 2 solver
non-convergence, 3 I/O, schema or usage.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._jit import backend_name
from .discretize import DEFAULT_N, discretize_model
from .experiments import limit_report, reproduce_figures, sweep_k
from .model import (FixedCostError, ModelError, ValidationError, load_model, resolve_config_path,
                    validate_model)
from .policy import PolicyError, ThresholdPolicy, extract_policy
from .simulate import BENEFIT_TOL, ShockStream, estimate_J, simulate_policy
from .solve import (DEFAULT_TOL, ConvergenceError, NumericalError, SolverConfig, qvi_solve,
                    residual_check, write_solver_log, write_values_csv)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONVERGENCE = 2
EXIT_IO = 3

MANIFEST = "manifest.json"


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args):
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model(args):
    model = load_model(args.config)
    if getattr(args, "k", None) is not None:
        model = model.with_k(args.k)
    return model


def _solve(model, args):
    dm = discretize_model(model, args.grid)
    vf = qvi_solve(dm, SolverConfig(tol=args.tol))
    if not vf.converged:
        raise ConvergenceError(f"no convergence after {vf.iterations} sweeps "
                               f"(last change {vf.sup_change:.3e})")
    return dm, vf


def _write_kernel(out, dm):
    p1, p2 = out / "kernel.csv", out / "failure_mass.csv"
    with open(p1, "w") as fh:
        fh.write("i,j,p_ij\n")
        for i in range(dm.N):
            js, ps = dm.kernel.row(i)
            for j, p in zip(js.tolist(), ps.tolist()):
                fh.write("%d,%d,%.17g\n" % (i, j, p))
    with open(p2, "w") as fh:
        fh.write("i,q_i\n")
        for i, q in enumerate(dm.kernel.fail_mass.tolist()):
            fh.write("%d,%.17g\n" % (i, q))
    return [p1, p2]


# ---------------------------------------------------------------------------
# subcommands; each returns (exit code, artifact paths)


def cmd_validate(args, out):
    report = validate_model(load_model(args.config))
    for issue in report.issues:
        print(f"{issue.severity}: {issue.code}: {issue.message}")
    paths = []
    if out is not None:
        p = out / "validation.json"
        _dump_json(p, report.to_dict())
        paths.append(p)
    if not report.ok:
        raise ValidationError(report)
    print("ok")
    return EXIT_OK, paths


def cmd_solve(args, out):
    dm, vf = _solve(_model(args), args)
    print(f"converged in {vf.iterations} sweeps (sup change {vf.sup_change:.3e}); "
          f"V(m)={vf.values[0]:.6g} V(M)={vf.values[-1]:.6g}")
    paths = []
    if out is not None:
        paths = [out / "values.csv", out / "solver_log.csv"]
        write_values_csv(paths[0], dm.r, vf.values)
        write_solver_log(paths[1], vf)
    return EXIT_OK, paths


def _policy_doc(pol, model):
    doc = pol.to_dict()
    doc["k"] = model.k
    return doc


def cmd_policy(args, out):
    model = _model(args)
    dm, vf = _solve(model, args)
    pol = extract_policy(dm, vf, args.gap_tol)
    doc = _policy_doc(pol, model)
    print(json.dumps(doc, sort_keys=True))
    paths = []
    if out is not None:
        paths = [out / "policy.json", out / "obstacle_gap.csv", out / "values.csv"]
        _dump_json(paths[0], doc)
        gap = residual_check(dm, vf).obstacle_gap
        with open(paths[1], "w") as fh:
            fh.write("r,gap\n")
            for r, g in zip(dm.r.tolist(), gap.tolist()):
                fh.write("%.17g,%.17g\n" % (r, g))
        write_values_csv(paths[2], dm.r, vf.values)
    return EXIT_OK, paths


def cmd_simulate(args, out):
    model = _model(args)
    if args.policy == "from-solve":
        dm, vf = _solve(model, args)
        pol = extract_policy(dm, vf)
    else:
        try:
            doc = json.loads(Path(args.policy).read_text())
        except json.JSONDecodeError as exc:
            raise ModelError(f"{args.policy}: invalid JSON ({exc})", "schema") from None
        pol = ThresholdPolicy.from_dict(doc)
        if (pol.m, pol.M) != (model.m, model.M):
            raise PolicyError(f"policy is for [{pol.m}, {pol.M}], model is on "
                              f"[{model.m}, {model.M}]")
    est = estimate_J(model, pol, args.r0, args.n, args.seed, args.horizon, args.benefit_tol,
                     threads=args.threads)
    doc = dict(est.to_dict(), r0=args.r0)
    if args.horizon is not None:
        doc["horizon"] = args.horizon
    print(json.dumps(doc, sort_keys=True))
    paths = []
    if out is not None:
        traj = simulate_policy(model, pol, args.r0, args.horizon,
                               ShockStream(args.seed, args.trajectory_stream), args.benefit_tol)
        paths = [out / "mc.json", out / "trajectory.csv", out / "policy.json"]
        _dump_json(paths[0], doc)
        traj.to_csv(paths[1])
        _dump_json(paths[2], _policy_doc(pol, model))
    return EXIT_OK, paths


def _parse_k_list(text):
    try:
        ks = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"bad --k-list {text!r}") from None
    if not ks:
        raise UsageError("empty --k-list")
    return ks


def cmd_sweep(args, out):
    base = load_model(args.config)
    table = sweep_k(base, _parse_k_list(args.k_list), args.grid, SolverConfig(tol=args.tol),
                    threads=args.threads)
    print("k s_low s_high S iters")
    for row in table.rows:
        p = row.policy
        print(f"{row.k:.6g} {p.s_low:.6g} {p.s_high:.6g} {p.S_target:.6g} {row.iterations}")
    paths = []
    if out is not None:
        paths = table.write(out)
        if len(table) > 1 and len(set(table.ks)) == len(table):
            rep = limit_report(table.ks, table.r, [r.values for r in table.rows], table.H)
            p = out / "limit.json"
            _dump_json(p, rep.to_dict())
            paths.append(p)
    return EXIT_OK, paths


def cmd_figures(args, out):
    ks = _parse_k_list(args.k_list) if args.k_list else None
    dest = Path(args.out) if args.out is not None else Path("out")
    table, report, paths = reproduce_figures(args.example, dest, ks, args.grid,
                                             threads=args.threads)
    print("k s_low s_high S iters")
    for row in table.rows:
        p = row.policy
        print(f"{row.k:.6g} {p.s_low:.6g} {p.s_high:.6g} {p.S_target:.6g} {row.iterations}")
    print(f"wrote {len(paths)} files under {dest / f'ex{int(args.example)}'}")
    return EXIT_OK, paths


def cmd_residuals(args, out):
    dm, vf = _solve(_model(args), args)
    rep = residual_check(dm, vf, report_tol=args.report_tol)
    print(f"max |min(branches)| = {rep.max_abs_min:.3e}; {rep.active.size} active nodes; "
          f"{rep.flagged.size} above {rep.report_tol:g}")
    paths = []
    if out is not None:
        p = out / "residuals.csv"
        with open(p, "w") as fh:
            fh.write("r,continuation,obstacle_gap,min\n")
            for row in zip(dm.r.tolist(), rep.continuation.tolist(), rep.obstacle_gap.tolist(),
                           rep.min_branch.tolist()):
                fh.write("%.17g,%.17g,%.17g,%.17g\n" % row)
        paths.append(p)
    return EXIT_OK, paths


def cmd_kernel(args, out):
    dm = discretize_model(_model(args), args.grid)
    sums = dm.kernel.row_sums()
    print(f"N={dm.N} bandwidth={dm.kernel.weights.size} "
          f"max |row sum - 1|={float(np.max(np.abs(sums - 1.0))):.3e}")
    return EXIT_OK, (_write_kernel(out, dm) if out is not None else [])


def cmd_rerun(args, out):
    path = Path(args.manifest)
    man = json.loads(path.read_text())
    try:
        argv = list(man["argv"])
        recorded = man["artifacts"]
    except (KeyError, TypeError):
        raise ModelError(f"{path}: not a run manifest", "schema") from None
    dest = Path(args.out) if args.out is not None else path.parent / "rerun"
    if "--out" in argv:
        i = argv.index("--out")
        argv[i + 1] = str(dest)
    else:
        argv += ["--out", str(dest)]
    code = run(argv)
    if code != EXIT_OK:
        return code, []
    if man.get("subcommand") == "figures":
        dest = dest / f"ex{man['params']['example']}"
    mismatched = []
    for name, digest in sorted(recorded.items()):
        p = dest / name
        if not p.exists() or _sha256(p) != digest:
            mismatched.append(name)
    print(json.dumps({"identical": not mismatched, "mismatched": mismatched,
                      "checked": len(recorded)}, sort_keys=True))
    return (EXIT_OK if not mismatched else EXIT_VALIDATION), []


# ---------------------------------------------------------------------------
# parser


def _common(p, config=True, grid=True, tol=True, k=True):
    if config:
        p.add_argument("config", help="model JSON (ex1..ex3 resolve to the bundled examples)")
    if grid:
        p.add_argument("--grid", type=int, default=DEFAULT_N, help="grid nodes N")
    if tol:
        p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="solver sup-norm tolerance")
    if k:
        p.add_argument("--k", type=float, default=None, help="override the fixed cost k")
    p.add_argument("--out", default=None, help="artifact directory (also gets manifest.json)")
    p.add_argument("--threads", type=int, default=None, help="worker cap; results do not change")


def build_parser():
    parser = _Parser(prog="shockmaint", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"shockmaint {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", help="check a model config")
    _common(p, grid=False, tol=False, k=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve the QVI; writes values.csv and solver_log.csv")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("policy", help="solve and extract the (s_low, s_high, S) policy")
    _common(p)
    p.add_argument("--gap-tol", type=float, default=None, help="intervention-set tolerance")
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("simulate", help="Monte Carlo value of a policy")
    _common(p)
    p.add_argument("--policy", required=True, help="policy JSON file or 'from-solve'")
    p.add_argument("--r0", type=float, required=True, help="initial state")
    p.add_argument("--n", type=int, default=10_000, help="number of paths")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=None, help="stop paths at this time")
    p.add_argument("--benefit-tol", type=float, default=BENEFIT_TOL,
                   help="per-segment quadrature tolerance")
    p.add_argument("--trajectory-stream", type=int, default=0,
                   help="path index dumped to trajectory.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="policies over a list of fixed costs")
    _common(p, k=False)
    p.add_argument("--k-list", required=True, help="comma or space separated k values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figures", help="figure data for a shipped example")
    _common(p, config=False, tol=False, k=False)
    p.add_argument("--example", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--k-list", default=None, help="override the default k ladder")
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("residuals", help="QVI residuals of the converged solution")
    _common(p)
    p.add_argument("--report-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_residuals)

    p = sub.add_parser("kernel", help="dump the discrete jump kernel")
    _common(p, tol=False)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("rerun", help="replay a manifest and compare artifact hashes")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="where to replay (default: <manifest dir>/rerun)")
    p.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_rerun)
    return parser


# ---------------------------------------------------------------------------


def _fail(code, name, message):
    sys.stderr.write(json.dumps({"error": name, "message": str(message), "exit": code}) + "\n")
    return code


def _write_manifest(args, argv, out, paths, elapsed):
    config = getattr(args, "config", None)
    if config is not None:
        # replay from anywhere: pin the config to its resolved absolute path
        resolved = str(resolve_config_path(config).resolve())
        argv = list(argv)
        argv[argv.index(config, argv.index(args.command) + 1)] = resolved
        config = resolved
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    man = {
        "subcommand": args.command,
        "argv": argv,
        "config": config,
        "params": params,
        "seed": getattr(args, "seed", 0),
        "artifacts": {str(Path(p).relative_to(out)): _sha256(p) for p in paths},
        "wall_clock_s": round(elapsed, 3),
        "version": __version__,
        "backend": backend_name(),
    }
    _dump_json(out / MANIFEST, man)


def run(argv=None):
    """Parse ``argv`` and execute; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_IO, "usage", exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        if args.command == "figures":
            out = Path(args.out if args.out is not None else "out") / f"ex{args.example}"
            out.mkdir(parents=True, exist_ok=True)
        elif args.command == "rerun":
            out = None
        else:
            out = _out_dir(args)
        t0 = time.perf_counter()
        code, paths = args.func(args, out)
        if out is not None and args.command != "rerun":
            _write_manifest(args, argv, out, paths, time.perf_counter() - t0)
        return code
    except FixedCostError as exc:
        return _fail(EXIT_VALIDATION, exc.code, exc)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, exc.code, exc)
    except PolicyError as exc:
        return _fail(EXIT_VALIDATION, exc.code, exc)
    except (ConvergenceError, NumericalError) as exc:
        return _fail(EXIT_CONVERGENCE, exc.code, exc)
    except ModelError as exc:
        return _fail(EXIT_IO, exc.code, exc)
    except UsageError as exc:
        return _fail(EXIT_IO, "usage", exc)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_IO, "io", exc)
    except (ValueError, RuntimeError) as exc:
        return _fail(EXIT_IO, "invalid_argument", exc)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
