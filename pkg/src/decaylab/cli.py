"""Command-line experiment runner.

Subcommands: analyze-f, flow dump, ode run, sde run, verdict, verify.
Exit codes: 0 success (and agreement where applicable), 2 completed with
disagreement, 1 execution or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import flow as flow_mod
from . import nonlinearity as nl
from . import sde_sim
from .classify import rate_verdict
from .errors import ConfigError, DecaylabError
from .flow import FlowMap, InverseFlow
from .ode_sim import integrate_external
from .report import csv_bytes, json_bytes, write_artifacts
from .scenario import Scenario, emit_toml, load_scenario

__all__ = ["main", "run_scenario", "analyze_f"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DISAGREEMENT = 2


def _out_dir(args, scenario: Scenario | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if scenario is not None:
        return Path(scenario.output.directory)
    return Path(os.environ.get("DECAYLAB_OUTPUT_DIR", "decaylab-out"))


def _parse_f_code(code: str) -> nl.NonlinearitySpec:
    """Compact nonlinearity codes: power:BETA | linear | flat_exponential | custom:CSV."""
    if code == "linear":
        return nl.linear()
    if code == "flat_exponential":
        return nl.flat_exponential()
    if code.startswith("power:"):
        return nl.power(float(code.split(":", 1)[1]))
    if code.startswith("custom:"):
        path = code.split(":", 1)[1]
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        return nl.from_table(data[:, 0], data[:, 1], label=f"custom({Path(path).name})")
    raise ConfigError(f"unrecognized nonlinearity code {code!r}")


def analyze_f(f: nl.NonlinearitySpec, run=None) -> dict:
    """Regime classification plus the transform-ratio diagnostics for f."""
    grid = nl.ScaleGrid(rungs=21)
    decay = nl.classify_nonlinearity(f)
    payload: dict = {
        "label": f.label,
        "regime": decay.regime,
        "evidence": [{"test": e.test, "outcome": e.outcome, "margin": e.margin} for e in decay.evidence],
        "shrink_limsup_table": {
            repr(mu): nl.estimate_phi_bar(f, mu).limsup_est for mu in (0.5, 0.25, 0.125)
        },
        "shrink_liminf_table": {
            repr(eps): nl.estimate_phi_under(f, eps).liminf_est for eps in (0.1, 0.01, 0.001)
        },
        "superlinearity": None,
        "rho": None,
        "phi_F_bounds": None,
        "log_bound": None,
    }
    sup = nl.check_superlinearity(f)
    payload["superlinearity"] = {
        "passed": sup.passed,
        "decreasing": sup.decreasing,
        "terminal_over_initial": sup.terminal_over_initial,
    }
    fm = FlowMap(f)
    rho = nl.estimate_rho_limits(f, fm, grid)
    payload["rho"] = {
        "l": rho.l,
        "L": rho.L,
        "window_spread": rho.estimate.window_spread,
        "truncated": rho.estimate.truncated,
    }
    if decay.regime == nl.POWER_LIKE:
        inv = InverseFlow(fm)
        rep = flow_mod.verify_phi_F_bounds(inv, rho.l, rho.L)
        payload["phi_F_bounds"] = {
            "all_within": rep.all_within,
            "psi_liminf": list(rep.psi_liminf),
            "records": [
                {
                    "eps": r.eps,
                    "one_minus_liminf": r.one_minus_liminf,
                    "bounds": list(r.liminf_bounds),
                    "within": r.liminf_within,
                    "slack_lower": r.slack_lower,
                    "slack_upper": r.slack_upper,
                }
                for r in rep.records
            ],
        }
        lb = nl.check_phi_bar_log_bound(f)
        payload["log_bound"] = {
            "fitted_c": lb.fitted_c,
            "bounded": lb.bounded,
            "mus": list(lb.mus),
            "slack": list(lb.slack),
        }
    return payload


def _run_ode_scenario(sc: Scenario, out_dir: Path, verdict_only: bool = False) -> int:
    from .ode_sim import zero_perturbation

    g = sc.perturbation if sc.perturbation is not None else zero_perturbation()
    fm = FlowMap(sc.f, abs_tol=sc.run.quad_abs_tol, rel_tol=sc.run.quad_rel_tol)
    inv = InverseFlow(fm, root_tol=sc.run.root_tol)
    traj = integrate_external(sc.f, g, sc.run.xi, sc.run.horizon, rtol=sc.run.rtol, atol=sc.run.atol)
    verdict, rs = rate_verdict(
        sc.f, g, traj, inv,
        tol_lambda=sc.run.tol_lambda, drift_tol=sc.run.drift_tol, c_bound=sc.run.c_bound,
    )
    files = {
        "verdict.json": json_bytes(verdict.as_dict()),
        "effective_config.toml": emit_toml(sc.effective),
    }
    if verdict_only:
        files["ratio.csv"] = csv_bytes(
            ("t", "ratio", "deriv_ratio"), zip(rs.t, rs.ratio, rs.deriv_ratio)
        )
    else:
        finv = np.array([inv.compute(float(t)) for t in rs.t])
        rows = zip(rs.t, traj.x[: len(rs.t)], traj.deriv[: len(rs.t)], finv, rs.ratio)
        files["trajectory.csv"] = csv_bytes(("t", "x", "deriv", "Finv", "ratio"), rows)
    write_artifacts(out_dir, files)
    return EXIT_OK if verdict.agreement else EXIT_DISAGREEMENT


def _run_sde_scenario(sc: Scenario, out_dir: Path, paths=None, seed=None) -> int:
    fm = FlowMap(sc.f, abs_tol=sc.run.quad_abs_tol, rel_tol=sc.run.quad_rel_tol)
    inv = InverseFlow(fm, root_tol=sc.run.root_tol)
    n_paths = int(paths) if paths is not None else sc.run.paths
    use_seed = int(seed) if seed is not None else sc.run.seed
    ens = sde_sim.simulate_ensemble(
        sc.f, sc.noise, sc.run.xi, sc.run.horizon, n_paths, use_seed, inv=inv
    )
    rep = sde_sim.classify_ensemble(
        ens, sigma=sc.noise, inv=inv,
        tol_lambda=sc.run.sde_tol_lambda, drift_tol=sc.run.sde_drift_tol, c_bound=sc.run.c_bound,
    )
    # Sigma table over the terminal decade (where defined)
    sigma_table = []
    for t in ens.record_times:
        try:
            sigma_table.append((float(t), sde_sim.compute_Sigma(sc.noise, float(t))))
        except DecaylabError:
            continue
    summary = rep.as_dict()
    summary["n_paths"] = ens.n_paths
    summary["seed"] = ens.seed
    summary["horizon"] = ens.horizon
    summary["sigma_table"] = [{"t": t, "Sigma": s} for t, s in sigma_table[-24:]]
    eff = dict(sc.effective)
    eff["run"] = dict(eff.get("run", {}), paths=n_paths, seed=use_seed)
    rows = [
        (p, ens.terminal_states[p], ens.terminal_ratios[p], rep.buckets[p])
        for p in range(ens.n_paths)
    ]
    files = {
        "ensemble.csv": csv_bytes(("path", "terminal_state", "terminal_ratio", "bucket"), rows),
        "ensemble_summary.json": json_bytes(summary),
        "effective_config.toml": emit_toml(eff),
    }
    write_artifacts(out_dir, files)
    mu_bucket = rep.mu.bucket if rep.mu is not None else "not_applicable"
    union = rep.preserved_union_fraction
    if mu_bucket == "zero":
        agree = union >= 0.9
    elif mu_bucket == "infinite" or (sc.noise is not None and not sc.noise.in_L2):
        agree = union <= 0.5
    else:
        agree = True
    return EXIT_OK if agree else EXIT_DISAGREEMENT


def run_scenario(path: str | Path, out_dir=None, paths=None, seed=None) -> int:
    """Execute a scenario file end to end; returns the exit status."""
    sc = load_scenario(path)
    target = Path(out_dir) if out_dir else Path(sc.output.directory)
    if sc.mode == "sde":
        return _run_sde_scenario(sc, target, paths=paths, seed=seed)
    return _run_ode_scenario(sc, target)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="decaylab", description=__doc__)
    parser.add_argument("--threads", type=int, default=1, help="max parallel workers where supported")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-f", help="classify a nonlinearity and report its diagnostics")
    p.add_argument("--f", help="nonlinearity code: power:B | linear | flat_exponential | custom:CSV")
    p.add_argument("--scenario", help="read the nonlinearity from a scenario file")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("flow", help="transform utilities")
    fsub = p.add_subparsers(dest="flow_command", required=True)
    d = fsub.add_parser("dump", help="emit log-spaced (t, Finv) CSV")
    d.add_argument("--f", required=True)
    d.add_argument("--t-max", type=float, required=True)
    d.add_argument("--points", type=int, default=200)
    d.add_argument("--out", help="output directory")

    p = sub.add_parser("ode", help="deterministic scenarios")
    osub = p.add_subparsers(dest="ode_command", required=True)
    r = osub.add_parser("run", help="integrate a scenario and write trajectory + verdict")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out")

    p = sub.add_parser("sde", help="stochastic scenarios")
    ssub = p.add_subparsers(dest="sde_command", required=True)
    r = ssub.add_parser("run", help="simulate an ensemble and write summary")
    r.add_argument("--scenario", required=True)
    r.add_argument("--paths", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")

    p = sub.add_parser("verdict", help="run a scenario and emit the verdict record")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out")

    p = sub.add_parser("verify", help="run the full acceptance battery")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tol-lambda", type=float, default=0.05)
    p.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DecaylabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args) -> int:
    if args.command == "analyze-f":
        if bool(args.f) == bool(args.scenario):
            raise ConfigError("analyze-f needs exactly one of --f / --scenario")
        f = load_scenario(args.scenario).f if args.scenario else _parse_f_code(args.f)
        payload = analyze_f(f)
        write_artifacts(_out_dir(args), {"analysis.json": json_bytes(payload)})
        print(f"{f.label}: {payload['regime']}")
        return EXIT_OK

    if args.command == "flow":
        f = _parse_f_code(args.f)
        inv = InverseFlow(FlowMap(f))
        table = flow_mod.dump_flow(inv, args.t_max, args.points)
        write_artifacts(_out_dir(args), {"flow.csv": csv_bytes(("t", "Finv"), table)})
        return EXIT_OK

    if args.command == "ode":
        return run_scenario(args.scenario, out_dir=args.out)

    if args.command == "sde":
        return run_scenario(args.scenario, out_dir=args.out, paths=args.paths, seed=args.seed)

    if args.command == "verdict":
        sc = load_scenario(args.scenario)
        if sc.mode != "ode":
            raise ConfigError("verdict requires a deterministic ([perturbation] or unperturbed) scenario")
        out = Path(args.out) if args.out else Path(sc.output.directory)
        return _run_ode_scenario(sc, out, verdict_only=True)

    if args.command == "verify":
        from .verify import run_suite

        suite = run_suite(
            out_dir=_out_dir(args),
            seed=args.seed,
            tol_lambda=args.tol_lambda,
            threads=args.threads,
            quiet=args.quiet,
        )
        return EXIT_OK if suite.all_passed else EXIT_DISAGREEMENT

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
