"""Command line front end: ``lmce run|classical|probe|report|dump``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical/stage failure.
Failures print a JSON object with a ``reason`` code on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import verify
from .classical import SmallPhaseError, small_phase_check, solve_classical
from .corrugation import M_for_lambda1, ScheduleError, iterate, make_schedule
from .decompose import decompose, smooth_random_metric
from .deficit import initial_data
from .elliptic import ConvergenceError, elliptic_bound_probe
from .fields import Grid, write_field
from .mollifier import UnderResolvedError, mollify_probe
from .phase import ExpressionError, PhaseError, PhaseSpec, evaluate, parse_expression
from .report import RunReport, _plain

log = logging.getLogger("lmce")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3

DEFAULTS = {
    "domain": "square",
    "grid": 257,
    "phase": "pi/2",
    "boundary": "0",
    "c2": 0.5,
    "seed": 0,
    "schedule": {"beta": 0.1, "sigma": 1.0 / 90.0, "lambda1": 16.0, "q_max": 2, "r0": 0.2,
                 "alpha": 0.5, "gamma": 2.0},
    "tests": {"nx": 3, "ny": 4, "radius": 0.18},
    "classical": {"tol": 1e-8, "max_iter": 100, "mu": 0.2, "kappa": 0.5},
}


class ConfigError(ValueError):
    pass


def _fail(code: int, reason: str, message: str, **extra) -> int:
    print(json.dumps(_plain({"status": "error", "reason": reason, "message": message} | extra)),
          file=sys.stderr)
    return code


def load_config(path, overrides: dict | None = None) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = json.loads(json.dumps(DEFAULTS))
    for key, val in raw.items():
        if key not in cfg and key not in ("name", "description"):
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(cfg.get(key), dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            unknown = set(val) - set(cfg[key]) - {"M"}
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
            cfg[key].update(val)
        else:
            cfg[key] = val
    for key, val in (overrides or {}).items():
        if val is not None:
            if key == "q_max":
                cfg["schedule"]["q_max"] = val
            else:
                cfg[key] = val
    if cfg["domain"] not in ("square", "disk"):
        raise ConfigError("domain must be 'square' or 'disk'")
    if not isinstance(cfg["grid"], int) or cfg["grid"] < 9:
        raise ConfigError("grid must be an integer >= 9")
    return cfg


def make_grid(cfg) -> Grid:
    n = cfg["grid"]
    return Grid.unit_square(n) if cfg["domain"] == "square" else Grid.unit_disk(n)


def _setup(cfg, weak: bool):
    grid = make_grid(cfg)
    phase = PhaseSpec.from_expression(cfg["phase"], grid)
    phase.validate(grid, cfg["c2"] if weak else None, weak=weak)
    g = evaluate(parse_expression(cfg["boundary"]), grid)
    return grid, phase, g


def _schedule(cfg, grid, delta1):
    s = cfg["schedule"]
    M = s.get("M") or M_for_lambda1(s["lambda1"], delta1, s["beta"])
    return make_schedule(s["beta"], s["sigma"], M, delta1, s["q_max"], grid,
                         r0=s["r0"], alpha=s["alpha"], gamma=s["gamma"])


def cmd_run(args) -> int:
    out = Path(args.out)
    try:
        cfg = load_config(args.config, {"grid": args.grid, "q_max": args.stages, "seed": args.seed})
        grid, phase, g = _setup(cfg, weak=True)
        A, state, info = initial_data(grid, g, phase)
        schedule = _schedule(cfg, grid, float((state.rho ** 2).max()))
        tests = verify.TestFunctionSet.lattice(grid, cfg["tests"]["nx"], cfg["tests"]["ny"],
                                               cfg["tests"]["radius"])
    except PhaseError as exc:
        return _fail(EXIT_INVALID, "phase_invalid", str(exc), nodes=exc.nodes)
    except ScheduleError as exc:
        return _fail(EXIT_INVALID, "schedule_unresolvable", str(exc), feasible_q=exc.feasible_q)
    except (ConfigError, ExpressionError, ValueError) as exc:
        return _fail(EXIT_INVALID, "config_invalid", str(exc))
    except (ConvergenceError, RuntimeError) as exc:
        return _fail(EXIT_FAILED, "initial_data_failed", str(exc))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    states, report = iterate(state, A, schedule, phase,
                             dump_dir=out / "stages" if args.dump_stages else None)
    report.config.update(cfg)
    verify.convergence_report(states, schedule, phase, tests, report, alpha=cfg["schedule"]["alpha"])
    report.wall_times.append(time.perf_counter() - t0)
    write_field(out / "v_final.csv", states[-1].v, grid)
    report.write(out / "report.json", include_timing=False)
    (out / "timings.json").write_text(json.dumps({"wall_times": report.wall_times}) + "\n")
    _print_summary(report)
    if report.status == "stage_failed":
        return _fail(EXIT_FAILED, "stage_failed", report.failure["message"], failure=report.failure)
    return EXIT_OK


def cmd_classical(args) -> int:
    out = Path(args.out)
    try:
        cfg = load_config(args.config, {"grid": args.grid})
        grid, phase, g = _setup(cfg, weak=False)
    except PhaseError as exc:
        return _fail(EXIT_INVALID, "phase_invalid", str(exc), nodes=exc.nodes)
    except (ConfigError, ExpressionError, ValueError) as exc:
        return _fail(EXIT_INVALID, "config_invalid", str(exc))
    c = cfg["classical"]
    info: dict = {}
    try:
        v = solve_classical(grid, g, phase, tol=c["tol"], max_iter=c["max_iter"], mu=c["mu"], info=info)
    except SmallPhaseError as exc:
        return _fail(EXIT_INVALID, "phase_too_large", str(exc))
    except ConvergenceError as exc:
        return _fail(EXIT_FAILED, "not_contracting", str(exc), residual=exc.residual)
    out.mkdir(parents=True, exist_ok=True)
    write_field(out / "v_classical.csv", v, grid)
    report = RunReport(config=cfg)
    report.probes["classical"] = {
        "iterations": info["iterations"], "contraction": info["contraction"],
        "residuals": info["residuals"], "final_residual": info["residuals"][-1],
        "tan_C_kappa": small_phase_check(phase, grid, c["kappa"]), "mu": c["mu"]}
    report.write(out / "report.json", include_timing=False)
    print(json.dumps(_plain(report.probes["classical"] | {"residuals": None}), sort_keys=True))
    return EXIT_OK


def _probe(kind, args) -> dict:
    n = args.grid
    seed = args.seed
    if kind == "gamma":
        return {"identity_error": verify.corrugation_identity_error(args.samples, seed),
                "ratios": verify.gamma_bound_probe(args.samples, seed)}
    if kind == "mollify":
        grid = Grid.unit_square(n or 257)
        f = np.sin(4.0 * np.pi * grid.x1)
        return {"f": "sin(4 pi x1)", "rows": [mollify_probe(f, l, grid) for l in (1 / 16, 1 / 32, 1 / 64)]}
    if kind == "elliptic":
        grid = Grid.unit_square(n or 129)
        res = elliptic_bound_probe(grid, trials=args.trials, seed=seed)
        return {k: v for k, v in res.items()}
    if kind == "decompose":
        grid = Grid.unit_square(n or 257)
        dec = decompose(smooth_random_metric(grid, args.hmax, seed), grid)
        return {"hmax": args.hmax, "residual_C0": dec.residual_norm, "min_a": dec.min_a,
                "min_det": dec.min_det, "iterations": dec.info.get("iterations"), "norms": dec.norms()}
    if kind == "stage-sweep":
        grid = Grid.unit_square(n or 1025)
        phase = PhaseSpec.from_expression(args.phase, grid)
        lams = [float(x) for x in args.lams.split(",")]
        state, A, delta = verify.smooth_stage_fixture(grid, phase)
        rows = verify.stage_sweep(state, A, phase, lams, args.tau, delta)
        for r in rows:
            r.pop("wall_time", None)
        return {"tau": args.tau, "rows": rows, "fit": verify.stage_error_probe(rows)}
    raise ValueError(f"unknown probe kind {kind!r}")


def cmd_probe(args) -> int:
    try:
        result = _probe(args.kind, args)
    except UnderResolvedError as exc:
        return _fail(EXIT_FAILED, "under_resolved", str(exc))
    except (ValueError, ExpressionError) as exc:
        return _fail(EXIT_INVALID, "probe_invalid", str(exc))
    text = json.dumps(_plain({"probe": args.kind, "seed": args.seed, "result": result}),
                      indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"probe_{args.kind}.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _print_summary(report: RunReport) -> None:
    conv = report.probes.get("convergence", {})
    print(f"status: {report.status}")
    for row in conv.get("table", []):
        extra = f"  cauchy_C1={row['cauchy_C1']:.4e}" if "cauchy_C1" in row else ""
        print(f"q={row['q']}  weak_residual={row['weak_residual_max']:.6e}  "
              f"boundary_bitwise={row['boundary_bitwise']}{extra}")


def cmd_report(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_INVALID, "report_unreadable", str(exc))
    rep = RunReport(config=data.get("config", {}), per_stage=data.get("per_stage", []),
                    probes=data.get("probes", {}), status=data.get("status", "ok"))
    _print_summary(rep)
    for row in rep.per_stage:
        print(json.dumps({k: row[k] for k in ("q", "delta_q", "lam_q", "rho_C0", "H_C0", "stage_E_C0")
                          if k in row}, sort_keys=True))
    return EXIT_OK


def cmd_dump(args) -> int:
    out = Path(args.out)
    try:
        cfg = load_config(args.config, {"grid": args.grid})
        grid, phase, g = _setup(cfg, weak=args.what == "initial")
    except PhaseError as exc:
        return _fail(EXIT_INVALID, "phase_invalid", str(exc), nodes=exc.nodes)
    except (ConfigError, ExpressionError, ValueError) as exc:
        return _fail(EXIT_INVALID, "config_invalid", str(exc))
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "initial":
        A, state, info = initial_data(grid, g, phase)
        fields = {"u": info["u"], "psi": info["psi"], "U": info["U"], "A": A, "rho0": state.rho}
    else:
        dec = decompose(smooth_random_metric(grid, args.hmax, cfg["seed"]), grid)
        fields = {"a": dec.a, "phi1": dec.phi[0], "phi2": dec.phi[1], "residual": dec.residual}
    for name, arr in fields.items():
        write_field(out / f"{name}.csv", arr, grid)
    print(json.dumps(sorted(fields)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmce", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="initial data, stage iteration and convergence report")
    r.add_argument("config")
    r.add_argument("--grid", type=int)
    r.add_argument("--stages", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--dump-stages", action="store_true")
    r.add_argument("--out", default="lmce_out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("classical", help="small-phase classical solver")
    c.add_argument("config")
    c.add_argument("--grid", type=int)
    c.add_argument("--out", default="lmce_out")
    c.set_defaults(func=cmd_classical)

    pr = sub.add_parser("probe", help="estimate probes")
    pr.add_argument("kind", choices=["gamma", "mollify", "elliptic", "stage-sweep", "decompose"])
    pr.add_argument("--grid", type=int)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--samples", type=int, default=100_000)
    pr.add_argument("--trials", type=int, default=50)
    pr.add_argument("--hmax", type=float, default=0.3)
    pr.add_argument("--lams", default="8,16,32")
    pr.add_argument("--tau", type=float, default=1.5)
    pr.add_argument("--phase", default="pi/2")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_probe)

    rp = sub.add_parser("report", help="summarise a report.json")
    rp.add_argument("report")
    rp.set_defaults(func=cmd_report)

    d = sub.add_parser("dump", help="write initial data or a decomposition as field files")
    d.add_argument("config")
    d.add_argument("--what", choices=["initial", "decomposition"], default="initial")
    d.add_argument("--grid", type=int)
    d.add_argument("--hmax", type=float, default=0.3)
    d.add_argument("--out", default="lmce_out")
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
