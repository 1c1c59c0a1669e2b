"""Command-line toolkit: flows, exponentials, shooting, certificates,
lifting, and the invariant suite.

Exit codes are contractual: 0 success, 1 solver non-convergence (or a flow
that failed / left its chart), 2 config or parse errors.

Model configs are TOML documents.  Scalar fields use the expression grammar

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' factor)?
    base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' base

with functions sin, cos, exp, sqrt; '^' right-associative; unary minus
binds tighter than '^'.  Identifiers are chart coordinates (q1..qn,
y1..yk) or names from [model.params].  An inline model looks like:

    [model.base]
    names = ["q1"]            # or dim = 1
    lower = [-5.0]
    upper = [5.0]
    [model.fiber]
    rank = 1
    [model.anchor]
    rows = [["1"]]            # optional; identity when square
    [model.gamma]
    exprs = ["-w^2*q1"]       # or [model.quadratic] coeffs = [[["0"]]]
    [model.params]
    w = 2.0

Trajectories are CSV with header ``t,q1..qn,y1..yk``; solver results are
key = value records with fields value(s), residual, iterations, status.
The environment variable ALGSODE_SEED overrides the default seed 0.
Angles and times are plain radians/seconds; no unit handling.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .algebroid import (
    AlgebroidModel, ChartBox, SodeField, flow, spray_from_coefficients,
)
from .errors import (
    AlgsodeError, ConfigError, EvalError, ExpressionError,
    IntegrationFailureError, LeftDomainError, NoConvergenceError,
    OutOfChartError, ParseError, SingularJacobianError,
)
from .expmap import (
    CertificateConfig, bvp_shoot, exp_mid, exp_pair, groupoid_bvp,
    groupoid_exp, h0_certificate,
)
from .expressions import ScalarField
from .groupoid import lift_sode, psi_defect
from .instances import InstanceBundle, InstanceSpec, build_model, list_instances
from .numerics import IntegratorConfig, NewtonConfig
from .verify import verify_all, verify_instance

_SOLVER_ERRORS = (NoConvergenceError, SingularJacobianError, LeftDomainError,
                  IntegrationFailureError, OutOfChartError)
_CONFIG_ERRORS = (ConfigError, ParseError, EvalError, ExpressionError)


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _vector(text: str) -> np.ndarray:
    text = text.strip()
    if text in ("", "[]"):
        return np.zeros(0)
    try:
        return np.array([float(p) for p in text.split(",")], float)
    except ValueError as exc:
        raise ConfigError(f"not a comma-separated vector: {text!r}") from exc


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",")]


def write_record(path: Path, fields: dict, append: bool = False):
    lines = []
    for key, val in fields.items():
        if isinstance(val, (list, tuple, np.ndarray)):
            lines.append(f"{key} = " + ", ".join(_fmt(v) for v in np.ravel(val)))
        elif isinstance(val, float):
            lines.append(f"{key} = {_fmt(val)}")
        else:
            lines.append(f"{key} = {val}")
    block = "\n".join(lines) + "\n"
    with open(path, "a" if append else "w") as fh:
        if append and fh.tell() > 0:
            fh.write("\n")
        fh.write(block)


def write_trajectory_csv(path: Path, traj):
    n = traj.qs.shape[1]
    k = traj.ys.shape[1]
    header = ",".join(["t"] + [f"q{i + 1}" for i in range(n)]
                      + [f"y{a + 1}" for a in range(k)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, q, y in zip(traj.ts, traj.qs, traj.ys):
            row = [t] + list(q) + list(y)
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# --- config handling ------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error in {path}: {exc}") from exc


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing {where}.{key}")
    return section[key]


def inline_model(section: dict) -> InstanceBundle:
    """Build an algebroid model + SODE from a [model] config section."""
    base_sec = _require(section, "base", "model")
    params = {k: float(v) for k, v in section.get("params", {}).items()}
    if "names" in base_sec:
        names = tuple(str(s) for s in base_sec["names"])
    else:
        names = tuple(f"q{i + 1}" for i in range(int(_require(base_sec, "dim", "model.base"))))
    lower = [float(v) for v in _require(base_sec, "lower", "model.base")]
    upper = [float(v) for v in _require(base_sec, "upper", "model.base")]
    try:
        base = ChartBox(names, lower, upper)
    except ValueError as exc:
        raise ConfigError(f"model.base: {exc}") from exc

    fiber_sec = _require(section, "fiber", "model")
    k = int(_require(fiber_sec, "rank", "model.fiber"))
    if k < 0:
        raise ConfigError("model.fiber.rank must be >= 0")
    fiber_names = tuple(fiber_sec.get("names",
                                      [f"y{a + 1}" for a in range(k)]))
    fiber_box = None
    if "lower" in fiber_sec or "upper" in fiber_sec:
        try:
            fiber_box = ChartBox(fiber_names,
                                 [float(v) for v in _require(fiber_sec, "lower", "model.fiber")],
                                 [float(v) for v in _require(fiber_sec, "upper", "model.fiber")])
        except ValueError as exc:
            raise ConfigError(f"model.fiber: {exc}") from exc

    n = base.dim
    anchor_rows = section.get("anchor", {}).get("rows")
    if anchor_rows is None:
        if n != k:
            raise ConfigError("model.anchor.rows required when base dim != fiber rank")
        anchor_rows = [["1" if i == a else "0" for a in range(k)] for i in range(n)]
    if len(anchor_rows) != n or any(len(r) != k for r in anchor_rows):
        raise ConfigError(f"model.anchor.rows must be {n} rows of {k} entries")
    anchor = tuple(tuple(ScalarField.parse(str(e), names, params) for e in row)
                   for row in anchor_rows)

    tables = section.get("structure", {}).get("tables")
    if tables is None:
        zero = ScalarField.constant(0.0, names)
        structure = tuple(tuple(tuple(zero for _ in range(k)) for _ in range(k))
                          for _ in range(k))
    else:
        if len(tables) != k or any(len(t) != k or any(len(r) != k for r in t)
                                   for t in tables):
            raise ConfigError(f"model.structure.tables must be {k}x{k}x{k}")
        structure = tuple(tuple(tuple(ScalarField.parse(str(e), names, params)
                                      for e in row) for row in t) for t in tables)

    model = AlgebroidModel(base, k, anchor, structure,
                           fiber_names=fiber_names, fiber_box=fiber_box)

    if "quadratic" in section:
        coeffs = _require(section["quadratic"], "coeffs", "model.quadratic")
        try:
            table = tuple(tuple(tuple(ScalarField.parse(str(e), names, params)
                                      for e in row) for row in t) for t in coeffs)
            sode = spray_from_coefficients(model, table)
        except ValueError as exc:
            raise ConfigError(f"model.quadratic: {exc}") from exc
    else:
        exprs = section.get("gamma", {}).get("exprs", ["0"] * k)
        if len(exprs) != k:
            raise ConfigError(f"model.gamma.exprs must have {k} entries")
        sode = SodeField(model, tuple(
            ScalarField.parse(str(e), model.coord_names, params) for e in exprs))
    return InstanceBundle(section.get("name", "inline"), "algebroid", model, sode)


def _parse_params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--param needs key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        try:
            nums = _float_list(val)
            out[key] = nums[0] if len(nums) == 1 else nums
        except ValueError:
            out[key] = val  # expression string
    return out


def resolve_bundle(args, config: dict) -> InstanceBundle:
    if getattr(args, "instance", None):
        params = dict(config.get("instance", {}).get("params", {}))
        params.update(_parse_params(getattr(args, "param", None)))
        return build_model(InstanceSpec(args.instance, params))
    if "model" in config:
        return inline_model(config["model"])
    if "instance" in config:
        sec = config["instance"]
        return build_model(InstanceSpec(_require(sec, "name", "instance"),
                                        dict(sec.get("params", {}))))
    raise ConfigError("no model: pass --instance NAME or a config with "
                      "[model] / [instance]")


def integrator_config(args, config: dict) -> IntegratorConfig:
    sec = dict(config.get("integrator", {}))
    if getattr(args, "tol", None) is not None:
        sec["abs_tol"] = sec["rel_tol"] = args.tol
    try:
        return IntegratorConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[integrator]: {exc}") from exc


def newton_config(args, config: dict) -> NewtonConfig:
    sec = dict(config.get("newton", {}))
    try:
        return NewtonConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[newton]: {exc}") from exc


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get("ALGSODE_SEED", "0"))


def _outdir(args) -> Path:
    out = Path(getattr(args, "outdir", ".") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_groupoid(bundle: InstanceBundle):
    if bundle.kind != "groupoid":
        raise ConfigError(f"instance {bundle.name!r} is not a groupoid")


# --- commands --------------------------------------------------------------------------

def cmd_flow(args, config) -> int:
    bundle = resolve_bundle(args, config)
    icfg = integrator_config(args, config)
    traj = flow(bundle.sode, _vector(args.q0), _vector(args.y0), args.t, icfg,
                sample_dt=args.sample_dt)
    out = _outdir(args)
    write_trajectory_csv(out / "flow_trajectory.csv", traj)
    fields = {"status": traj.status, "t_end": float(traj.ts[-1]),
              "value": np.concatenate([traj.qs[-1], traj.ys[-1]])}
    if traj.t_exit is not None:
        fields["t_exit"] = traj.t_exit
    write_record(out / "flow_result.txt", fields)
    print(f"status = {traj.status}; wrote {out / 'flow_trajectory.csv'}")
    return 0 if traj.completed else 1


def cmd_exp(args, config) -> int:
    bundle = resolve_bundle(args, config)
    icfg = integrator_config(args, config)
    q0, v = _vector(args.q0), _vector(args.v)
    if args.mid:
        left, right = exp_mid(bundle.sode, args.h, q0, v, icfg)
        fields = {"status": "ok", "value": right, "left": left, "right": right}
    else:
        start, end = exp_pair(bundle.sode, args.h, q0, v, icfg)
        fields = {"status": "ok", "value": end, "start": start, "end": end}
    out = _outdir(args)
    write_record(out / "exp_result.txt", fields)
    print("endpoint = " + ", ".join(_fmt(x) for x in fields["value"]))
    return 0


def cmd_bvp(args, config) -> int:
    bundle = resolve_bundle(args, config)
    icfg = integrator_config(args, config)
    ncfg = newton_config(args, config)
    q, q_target = _vector(args.q_from), _vector(args.q_to)
    hs = _float_list(args.h)
    sweep = config.get("sweep", {}).get("h")
    if sweep and len(hs) == 1:
        hs = [float(h) for h in sweep]
    out = _outdir(args)
    result_path = out / "bvp_result.txt"
    if result_path.exists():
        result_path.unlink()
    code = 0
    for i, h in enumerate(hs):
        try:
            sol = bvp_shoot(bundle.sode, h, q, q_target, None, ncfg, icfg)
            write_record(result_path,
                         {"status": "converged", "h": h, "value": sol.v,
                          "residual": sol.residual, "iterations": sol.iterations},
                         append=i > 0)
            write_trajectory_csv(out / "bvp_trajectory.csv", sol.trajectory)
            print(f"h = {_fmt(h)}: v = " + ", ".join(_fmt(x) for x in sol.v)
                  + f" (residual {sol.residual:.3e}, {sol.iterations} iterations)")
        except (NoConvergenceError, SingularJacobianError) as exc:
            status = ("singular-jacobian" if isinstance(exc, SingularJacobianError)
                      else "no-convergence")
            fields = {"status": status, "h": h}
            if getattr(exc, "best", None) is not None:
                fields["value"] = exc.best
                fields["residual"] = exc.residual_norm
                fields["iterations"] = exc.iterations
            write_record(result_path, fields, append=i > 0)
            print(f"h = {_fmt(h)}: {status}", file=sys.stderr)
            code = 1
    return code


def cmd_h0(args, config) -> int:
    bundle = resolve_bundle(args, config)
    ccfg = CertificateConfig(
        grid_points=args.grid, random_samples=args.random,
        inflation=args.inflation, h_max=args.h_max)
    cert = h0_certificate(bundle.sode, _vector(args.q0), args.R, args.Rdot,
                          args.margin, ccfg, seed=_seed(args))
    out = _outdir(args)
    write_record(out / "h0_result.txt", {
        "status": "ok", "value": cert.h0, "h0": cert.h0,
        "C": cert.C, "Cdot": cert.Cdot, "M": cert.M,
        "R": cert.R, "Rdot": cert.Rdot, "margin": cert.margin,
        "bound_contraction": cert.bounds[0], "bound_position": cert.bounds[1],
        "bound_velocity": cert.bounds[2],
        "grid_samples": cert.report.n_grid, "random_samples": cert.report.n_random,
    })
    print(f"h0 = {_fmt(cert.h0)} (C={_fmt(cert.C)}, Cdot={_fmt(cert.Cdot)}, "
          f"M={_fmt(cert.M)})")
    return 0


def cmd_lift(args, config) -> int:
    bundle = resolve_bundle(args, config)
    _require_groupoid(bundle)
    lifted = lift_sode(bundle.model, bundle.sode)
    defect = psi_defect(bundle.model, lifted, bundle.sode,
                        samples=args.samples, seed=_seed(args))
    out = _outdir(args)
    write_record(out / "lift_result.txt",
                 {"status": "ok", "value": defect, "psi_defect": defect,
                  "samples": args.samples, "seed": _seed(args)})
    print(f"psi_defect = {defect:.6e} over {args.samples} samples")
    return 0


def cmd_gexp(args, config) -> int:
    bundle = resolve_bundle(args, config)
    _require_groupoid(bundle)
    icfg = integrator_config(args, config)
    g = groupoid_exp(bundle.model, bundle.sode, args.h,
                     _vector(args.q), _vector(args.a), icfg)
    out = _outdir(args)
    write_record(out / "gexp_result.txt", {"status": "ok", "value": g})
    print("element = " + ", ".join(_fmt(x) for x in g))
    return 0


def cmd_gbvp(args, config) -> int:
    bundle = resolve_bundle(args, config)
    _require_groupoid(bundle)
    icfg = integrator_config(args, config)
    ncfg = newton_config(args, config)
    pair, path, base = groupoid_bvp(bundle.model, bundle.sode, args.h,
                                    _vector(args.g), ncfg, icfg)
    out = _outdir(args)
    write_record(out / "gbvp_result.txt", {
        "status": "converged", "value": pair.minus,
        "minus": pair.minus, "plus": pair.plus,
        "residual": pair.residual, "iterations": pair.iterations})
    write_trajectory_csv(out / "gbvp_trajectory.csv", base)
    print("minus = " + ", ".join(_fmt(x) for x in pair.minus))
    return 0


def cmd_verify(args, config) -> int:
    if args.all:
        results = verify_all(seed=_seed(args))
    else:
        if not args.instance:
            raise ConfigError("verify needs --instance NAME or --all")
        params = _parse_params(args.param)
        results = {args.instance: verify_instance(args.instance, params,
                                                  seed=_seed(args))}
    ok = True
    for name, checks in results.items():
        print(f"instance: {name}")
        print(f"  {'check':38s} {'value':>12s} {'bound':>10s}   status")
        for c in checks:
            status = "PASS" if c.passed else "FAIL"
            ok = ok and c.passed
            print(f"  {c.name:38s} {c.value:12.3e} {c.bound:10.0e}   {status}")
    print("verify: " + ("all checks passed" if ok else "FAILURES above"))
    return 0 if ok else 1


# --- argument parsing -------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--instance", help="registry instance name")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="instance parameter (repeatable)")
    p.add_argument("--config", help="TOML config (instance/[model]/tolerances)")
    p.add_argument("--outdir", default=".", help="output directory")
    p.add_argument("--tol", type=float, help="integrator abs+rel tolerance")
    p.add_argument("--seed", type=int, help="seed (default env ALGSODE_SEED or 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="algsode",
        description="second-order fields on chart-level algebroids and "
                    "groupoids: flows, exponentials, shooting, certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="integrate a SODE and dump the trajectory")
    _add_common(p)
    p.add_argument("--q0", required=True)
    p.add_argument("--y0", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--sample-dt", type=float, default=None)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("exp", help="exponential pair (or midpoint pair)")
    _add_common(p)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--q0", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--mid", action="store_true")
    p.set_defaults(func=cmd_exp)

    p = sub.add_parser("bvp", help="two-point shooting")
    _add_common(p)
    p.add_argument("--h", required=True, help="step (comma list sweeps)")
    p.add_argument("--from", dest="q_from", required=True)
    p.add_argument("--to", dest="q_to", required=True)
    p.set_defaults(func=cmd_bvp)

    p = sub.add_parser("h0", help="certified uniqueness step bound")
    _add_common(p)
    p.add_argument("--q0", required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--Rdot", type=float, required=True)
    p.add_argument("--margin", type=float, default=0.01)
    p.add_argument("--grid", type=int, default=11)
    p.add_argument("--random", type=int, default=1000)
    p.add_argument("--inflation", type=float, default=1.01)
    p.add_argument("--h-max", type=float, default=10.0)
    p.set_defaults(func=cmd_h0)

    p = sub.add_parser("lift", help="lift a SODE through the vertical morphism "
                                    "and report the relatedness defect")
    _add_common(p)
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("gexp", help="groupoid exponential of an algebroid element")
    _add_common(p)
    p.add_argument("--q", default="", help="base point (empty for group instances)")
    p.add_argument("--a", required=True)
    p.add_argument("--h", type=float, required=True)
    p.set_defaults(func=cmd_gexp)

    p = sub.add_parser("gbvp", help="shoot for the algebroid element reaching g")
    _add_common(p)
    p.add_argument("--g", required=True)
    p.add_argument("--h", type=float, required=True)
    p.set_defaults(func=cmd_gbvp)

    p = sub.add_parser("verify", help="run the invariant suite")
    _add_common(p)
    p.add_argument("--all", action="store_true", help="every registry instance")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
