"""Command-line front end: every subcommand prints one JSON report on stdout.

Exit codes: 0 ok/stable, 1 I/O or parse error, 2 hypothesis failure, 3 no connection,
4 inconclusive verdict, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EvansLabError, NoConnection

EXIT_OK, EXIT_IO, EXIT_HYP, EXIT_CONN, EXIT_INCONCLUSIVE, EXIT_NUM = range(6)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_finite(obj.real), _finite(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        return _finite(float(obj))
    return obj


def _finite(v):
    # JSON has no inf/nan
    return float(v) if np.isfinite(v) else str(v)


def _load_model(spec: str):
    from .model import get_builtin, load_model
    if spec is None:
        raise CliError(EXIT_IO, "--model is required")
    if os.path.exists(spec):
        try:
            return load_model(spec)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(EXIT_IO, f"cannot parse model file {spec}: {exc}") from None
    try:
        return get_builtin(spec)
    except KeyError:
        raise CliError(EXIT_IO, f"{spec!r} is neither a readable file nor a builtin model") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory: {exc}") from None
    return out


def _save_config(args, out: Path) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    (out / f"{args.command}_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def _profile_and_coeffs(args, model):
    from .eigen import linearize
    from .profile import solve_profile
    tol = args.tol if args.tol is not None else 1e-10
    prof = solve_profile(model, X_max=getattr(args, "X_max", None), tol=tol)
    return prof, linearize(model, prof)


def _parse_complex_list(text: str):
    try:
        return np.array([complex(s.strip().replace(" ", "")) for s in text.split(",") if s.strip()])
    except ValueError:
        raise CliError(EXIT_IO, f"cannot parse lambda list {text!r}") from None


def _parse_floats(text: str):
    try:
        return np.array([float(s) for s in text.split(",") if s.strip()])
    except ValueError:
        raise CliError(EXIT_IO, f"cannot parse number list {text!r}") from None


# ------------------------------------------------------------------ subcommands

def cmd_check(args):
    from .model import check_hypotheses
    model = _load_model(args.model)
    rep = check_hypotheses(model)
    report = {"model": model.name, **rep.to_dict()}
    return report, EXIT_OK if rep.all_pass else EXIT_HYP


def cmd_profile(args):
    from .profile import profile_residual, solve_profile
    model = _load_model(args.model)
    out = _out_dir(args)
    prof = solve_profile(model, X_max=args.X_max, tol=args.tol if args.tol is not None else 1e-10)
    path = out / f"profile_{model.name}.csv"
    prof.to_csv(path)
    _save_config(args, out)
    return {"model": model.name, "csv": str(path), "X_max": prof.X_max, "theta_prof": prof.theta,
            "C_prof": prof.amplitude, "constant": prof.constant,
            "residual": profile_residual(model, prof)}, EXIT_OK


def cmd_evans(args):
    from .evans import evans_on_grid, write_evans_csv
    from .winding import build_contour
    model = _load_model(args.model)
    out = _out_dir(args)
    _, coeffs = _profile_and_coeffs(args, model)
    if args.lambdas:
        lams = _parse_complex_list(args.lambdas)
    else:
        lams = build_contour(args.R or 1.0, args.sigma0, args.nodes).nodes[:-1]
    samples = evans_on_grid(coeffs, lams)
    path = out / f"evans_{model.name}.csv"
    write_evans_csv(samples, path, meta={"model": model.name, "points": len(samples)})
    _save_config(args, out)
    failed = sum(not s.ok for s in samples)
    return {"model": model.name, "csv": str(path), "points": len(samples), "failed": failed}, \
        EXIT_OK if failed == 0 else EXIT_NUM


def cmd_verdict(args):
    from .winding import stability_verdict
    model = _load_model(args.model)
    _, coeffs = _profile_and_coeffs(args, model)
    v = stability_verdict(coeffs, R=args.R, sigma0=args.sigma0, n_nodes=args.nodes)
    report = {"model": model.name, **v.to_dict()}
    if args.out:
        out = _out_dir(args)
        (out / f"verdict_{model.name}.json").write_text(json.dumps(_jsonable(report), indent=2))
        _save_config(args, out)
    code = {"stable_evans": EXIT_OK, "unstable": EXIT_OK, "inconclusive": EXIT_INCONCLUSIVE}[v.verdict]
    return report, code


def cmd_resolvent(args):
    from .resolvent import Resolvent, residual_convergence, write_kernel_csv
    model = _load_model(args.model)
    out = _out_dir(args)
    _, coeffs = _profile_and_coeffs(args, model)
    lam = complex(args.lam.replace(" ", ""))
    res = Resolvent(coeffs, lam)
    xs = np.arange(0.0, min(args.x_max, res.L) + 1e-12, args.dx)
    ys = _parse_floats(args.y)
    blocks = [res.blocks(xs, y)[0] for y in ys]
    path = out / f"resolvent_{model.name}.csv"
    write_kernel_csv(path, lam, xs, ys, blocks, meta={"model": model.name})
    interior = xs[(xs > 0.05) & (xs < xs[-1] - 0.05)]
    checks = {f"{y:g}": residual_convergence(res, y, interior[::max(1, interior.size // 40)]) for y in ys}
    _save_config(args, out)
    return {"model": model.name, "lambda": lam, "csv": str(path), "residuals": checks}, EXIT_OK


def cmd_green(args):
    from .timedomain.ilt import ilt_green
    model = _load_model(args.model)
    out = _out_dir(args)
    _, coeffs = _profile_and_coeffs(args, model)
    x = np.arange(0.0, args.x_max + 1e-12, args.dx)
    ys = np.rint(_parse_floats(args.y) / args.dx) * args.dx
    ts = _parse_floats(args.t)
    gr = ilt_green(coeffs, x, ys, ts)
    path = out / f"green_{model.name}.csv"
    n = coeffs.n
    with open(path, "w") as fh:
        fh.write(f"# model={model.name}\n")
        fh.write(",".join(["t", "x", "y"] + [f"G_{i + 1}{j + 1}" for i in range(n) for j in range(n)]) + "\n")
        for a, t in enumerate(gr.t):
            for b, y in enumerate(gr.y):
                rows = np.column_stack([np.full(x.size, t), x, np.full(x.size, y), gr.G[a, b].reshape(x.size, -1)])
                np.savetxt(fh, rows, delimiter=",", fmt="%.12g")
    _save_config(args, out)
    return {"model": model.name, "csv": str(path), "error": gr.error, "imag_residue": gr.imag_residue,
            "contours": gr.contours}, EXIT_OK


def cmd_simulate(args):
    from .errors import InsufficientDecade
    from .eigen import linearize
    from .profile import solve_profile
    from .timedomain.decay import lp_decay_rates, zeta_track
    from .timedomain.nonlinear import solve_nonlinear
    from .timedomain.scenario import Scenario, make_g, make_h
    from .timedomain.templates import BoundTemplate
    from .eigen import speed_data
    if not args.scenario:
        raise CliError(EXIT_IO, "--scenario is required")
    try:
        sc = Scenario.load(args.scenario)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_IO, f"cannot parse scenario: {exc}") from None
    model = _load_model(sc.model) if isinstance(sc.model, str) else _model_from_doc(sc.model)
    out = _out_dir(args)
    prof = solve_profile(model, X_max=sc.profile.get("X_max"), tol=float(sc.profile.get("tol", 1e-10)))
    coeffs = linearize(model, prof)
    g = make_g(sc.g, sc.E0, model.n)
    h = make_h(sc.h, sc.E0, model.n)
    sol = solve_nonlinear(model, prof, g, h, T=sc.T, dx=float(sc.grid.get("dx", 0.05)),
                          X_dom=sc.grid.get("X_dom"), t_out=sc.times())
    sol.to_csv(out / "snapshots.csv", every=max(1, sol.t.size // 20))
    tmpl = BoundTemplate(speed_data(coeffs)[0])
    zeta = zeta_track(sol, tmpl)
    norms = np.column_stack([sol.t] + [sol.norms(p) for p in (1, 2, np.inf)])
    np.savetxt(out / "norms.csv", norms, delimiter=",", header="t,L1,L2,Linf", comments="", fmt="%.12g")
    np.savetxt(out / "zeta.csv", np.column_stack([zeta.t, zeta.zeta, zeta.snapshot]), delimiter=",",
               header="t,zeta,sup_ratio", comments="", fmt="%.12g")
    try:
        rates = {str(k): v for k, v in lp_decay_rates(sol).items()}
    except InsufficientDecade as exc:
        rates = {"error": str(exc)}
    _save_config(args, out)
    expected = {str(p): -0.5 * (1 - 1 / p) for p in (1, 2, np.inf)}
    return {"model": model.name, "E0": sc.E0, "T": sc.T, "zeta_sup": zeta.sup, "zeta_flat": zeta.flat_tail(),
            "lp_rates": rates, "lp_expected": expected, "steady_residual": sol.meta["steady_residual"],
            "out": str(out)}, EXIT_OK


def _model_from_doc(doc):
    from .model import model_from_dict
    try:
        return model_from_dict(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_IO, f"cannot parse inline model: {exc}") from None


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="builtin model name or model JSON file")
    common.add_argument("--out", default="evanslab_out", help="output directory")
    common.add_argument("--tol", type=float, default=None, help="profile tolerance")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized sampling")
    common.add_argument("--threads", type=int, default=1,
                        help="recorded only; lambda sweeps are vectorized in-process")

    p = argparse.ArgumentParser(prog="evanslab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check", parents=[common], help="check structural hypotheses")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("profile", parents=[common], help="solve the boundary-layer profile")
    s.add_argument("--X-max", dest="X_max", type=float, default=None)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("evans", parents=[common], help="Evans function on a contour or lambda list")
    s.add_argument("--lambdas", default=None, help="comma-separated complex values, e.g. 1,0.5+2j")
    s.add_argument("--R", type=float, default=None)
    s.add_argument("--sigma0", type=float, default=0.0)
    s.add_argument("--nodes", type=int, default=64)
    s.set_defaults(func=cmd_evans)

    s = sub.add_parser("verdict", parents=[common], help="winding-number stability verdict")
    s.add_argument("--R", type=float, default=None)
    s.add_argument("--sigma0", type=float, default=0.0)
    s.add_argument("--nodes", type=int, default=64)
    s.set_defaults(func=cmd_verdict, out=None)

    s = sub.add_parser("resolvent", parents=[common], help="resolvent kernel and residual report")
    s.add_argument("--lam", default="1")
    s.add_argument("--y", default="2")
    s.add_argument("--x-max", dest="x_max", type=float, default=10.0)
    s.add_argument("--dx", type=float, default=0.05)
    s.set_defaults(func=cmd_resolvent)

    s = sub.add_parser("green", parents=[common], help="time-domain Green function by inverse Laplace")
    s.add_argument("--y", default="2")
    s.add_argument("--t", default="1")
    s.add_argument("--x-max", dest="x_max", type=float, default=20.0)
    s.add_argument("--dx", type=float, default=0.05)
    s.set_defaults(func=cmd_green)

    s = sub.add_parser("simulate", parents=[common], help="nonlinear perturbation run from a scenario")
    s.add_argument("--scenario", default=None)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_IO
    np.random.seed(args.seed)
    try:
        report, code = args.func(args)
        report = {"status": "ok", "command": args.command, **report}
    except CliError as exc:
        report, code = {"status": "error", "command": args.command, "message": str(exc)}, exc.code
    except NoConnection as exc:
        report, code = {"status": "error", "command": args.command, "error": "NoConnection",
                        "message": str(exc)}, EXIT_CONN
    except EvansLabError as exc:
        report, code = {"status": "error", "command": args.command, "error": type(exc).__name__,
                        "message": str(exc)}, EXIT_NUM
    except (OSError, json.JSONDecodeError) as exc:
        report, code = {"status": "error", "command": args.command, "error": type(exc).__name__,
                        "message": str(exc)}, EXIT_IO
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        report, code = {"status": "error", "command": args.command, "error": type(exc).__name__,
                        "message": str(exc)}, EXIT_NUM
    report["exit_code"] = code
    print(json.dumps(_jsonable(report), indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
