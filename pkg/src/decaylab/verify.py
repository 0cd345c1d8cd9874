"""The acceptance battery behind `decaylab verify`.

Thirteen numbered criteria, each with pinned tolerances, pinned seeds,
and runtime limits.  Criterion expectations that depend on stochastic
outcomes are pinned from the seed-42 oracle runs and must reproduce
bit-identically; running with another seed relaxes those to their
threshold forms (the seed policy).  Artifacts contain no timings or
timestamps so that two runs with identical inputs are byte-identical;
elapsed seconds appear on stdout only.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nonlinearity as nl
from .classify import rate_verdict
from .errors import DomainError
from .flow import FlowMap, InverseFlow, dump_flow, verify_phi_F_bounds
from .ode_sim import integrate_external, integrate_internal, power_tail, reduce_external_to_internal, zero_perturbation
from .report import csv_bytes, json_bytes, write_artifacts
from .sde_sim import classify_ensemble, estimate_mu, noise_constant, noise_power_tail, simulate_ensemble

__all__ = ["run_suite", "SuiteResult", "CriterionResult", "GOLDEN_MATRIX",
           "expected_cell", "golden_matrix_cells"]

# seed-42 oracle pins (recorded once from the finished engine; criterion 10/11)
PRESERVED_PIN = {"+1": 164, "-1": 29, "unresolved": 7}
EXCLUSION_PIN = {"unresolved": 200}
# the (beta=3, q=2, xi=-1) cell has xi' = 0 exactly; the path crosses zero and
# locks onto the positive branch (pinned from an independent reference run)
PINNED_LAMBDA = {(3.0, 2.0, -1.0): 1}

GOLDEN_MATRIX = [
    (beta, q, xi) for beta in (2.0, 3.0) for q in (3.0, 2.0, 1.5) for xi in (1.0, -1.0)
]


def expected_cell(beta: float, q: float, xi: float) -> tuple[str, int | None]:
    """Theory-derived expected verdict for a golden-matrix cell.

    The tail integral scales like (1+t)^(1-q) and the decay yardstick like
    t^(-1/(beta-1)), so their ratio vanishes iff (1-q) + 1/(beta-1) < 0,
    stays bounded-nonzero at equality, and diverges otherwise.
    """
    e = (1.0 - q) + 1.0 / (beta - 1.0)
    if e < -1e-9:
        lam = PINNED_LAMBDA.get((beta, q, xi))
        if lam is None:
            xi_p = xi + 1.0 / (q - 1.0)
            lam = 1 if xi_p > 0 else -1
        return "Preserved", lam
    if abs(e) <= 1e-9:
        return "BoundedO", None
    return "NotPreserved", None


@dataclass
class CriterionResult:
    cid: int
    title: str
    passed: bool
    runtime_ok: bool
    elapsed: float
    details: dict = field(default_factory=dict)

    def record(self) -> dict:
        # no elapsed seconds in artifacts: byte-identical reruns
        return {
            "id": self.cid,
            "title": self.title,
            "passed": self.passed,
            "runtime_ok": self.runtime_ok,
            "details": self.details,
        }


@dataclass
class SuiteResult:
    results: list[CriterionResult]
    out_dir: Path | None
    seed: int
    seed_policy: str

    @property
    def all_passed(self) -> bool:
        return all(r.passed and r.runtime_ok for r in self.results)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _criterion_1() -> CriterionResult:
    def work():
        rows = []
        ok = True
        for beta in (2.0, 3.0):
            fm = FlowMap(nl.power(beta))
            for k in range(5):
                x = 10.0**-k
                exact = (x ** (1.0 - beta) - 1.0) / (beta - 1.0)
                got = fm.compute_F(x)
                rel = abs(got - exact) / max(1.0, abs(exact))
                ok = ok and rel <= 1e-9
                rows.append({"beta": beta, "x": x, "rel_err": rel})
        return ok, rows

    (ok, rows), el = _timed(work)
    return CriterionResult(1, "transform oracle for power nonlinearities", ok, el < 1.0, el,
                           {"tolerance": 1e-9, "cases": rows})


def _criterion_2() -> CriterionResult:
    def work():
        ts = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 99)])
        out = {}
        ok = True
        for f in (nl.power(2.0), nl.power(3.0), nl.linear(), nl.flat_exponential()):
            fm = FlowMap(f)
            inv = InverseFlow(fm)
            t_max = fm.largest_supported_t()
            usable = ts[ts <= t_max]
            worst = 0.0
            for t in usable:
                worst = max(worst, abs(fm.compute_F(inv.compute(float(t))) - float(t)))
            ok = ok and worst <= 1e-8 and len(usable) >= 10
            bounded_error_raised = True
            if t_max < ts[-1]:
                try:
                    inv.compute(float(ts[-1]))
                    bounded_error_raised = False
                except DomainError:
                    pass
                ok = ok and bounded_error_raised
            out[f.label] = {"worst_residual": worst, "t_defined_up_to": t_max, "n_points": int(len(usable))}
        return ok, out

    (ok, out), el = _timed(work)
    return CriterionResult(2, "inverse round trip on catalog nonlinearities", ok, el < 5.0, el,
                           {"tolerance": 1e-8, "per_f": out})


def _criterion_3() -> CriterionResult:
    def work():
        want = {"power(beta=2)": "PowerLike", "linear": "SlowerThanPower",
                "flat_exponential": "FasterThanPower"}
        got = {}
        for f in (nl.power(2.0), nl.linear(), nl.flat_exponential()):
            got[f.label] = nl.classify_nonlinearity(f).regime
        return got == want, got

    (ok, got), el = _timed(work)
    return CriterionResult(3, "worked-example regime classification", ok, el < 5.0, el, {"got": got})


def _criterion_4(rho_cache: dict) -> CriterionResult:
    def work():
        grid = nl.ScaleGrid(rungs=21)
        out = {}
        ok = True
        for beta, want in ((2.0, 1.0), (3.0, 0.5)):
            f = nl.power(beta)
            rho = nl.estimate_rho_limits(f, FlowMap(f), grid)
            rho_cache[beta] = rho
            err = max(abs(rho.l - want), abs(rho.L - want))
            ok = ok and err <= 1e-4
            out[f"beta={beta:g}"] = {"l": rho.l, "L": rho.L, "target": want, "max_err": err}
        return ok, out

    (ok, out), el = _timed(work)
    return CriterionResult(4, "compensated-ratio limits l, L", ok, True, el,
                           {"tolerance": 1e-4, "window_x": "~1e-5..1e-7", "per_beta": out})


def _criterion_5(rho_cache: dict) -> CriterionResult:
    def work():
        out = []
        ok = True
        for beta in (2.0, 3.0):
            f = nl.power(beta)
            fm = FlowMap(f)
            inv = InverseFlow(fm)
            rho = rho_cache[beta]
            rep = verify_phi_F_bounds(inv, rho.l, rho.L, eps_ladder=(0.1, 0.5), slack_tol=1e-3)
            for r in rep.records:
                ok = ok and r.liminf_within
                out.append({
                    "beta": beta, "eps": r.eps,
                    "one_minus_liminf": r.one_minus_liminf,
                    "bounds": list(r.liminf_bounds), "within": r.liminf_within,
                })
        return ok, out

    (ok, out), el = _timed(work)
    return CriterionResult(5, "inverse-ratio inequality suite", ok, True, el,
                           {"slack": 1e-3, "records": out})


def _criterion_6() -> CriterionResult:
    def work():
        traj = integrate_external(nl.power(2.0), zero_perturbation(), 1.0, 1e6)
        err = float(np.max(np.abs(traj.x * (1.0 + traj.t) - 1.0)))
        return err <= 1e-5, err

    (ok, err), el = _timed(work)
    return CriterionResult(6, "unperturbed exactness over six decades", ok, el < 2.0, el,
                           {"tolerance": 1e-5, "sup_error": err})


def _matrix_cell(beta: float, q: float, xi: float, tol_lambda: float):
    f = nl.power(beta)
    fm = FlowMap(f)
    inv = InverseFlow(fm)
    g = power_tail(1.0, q)
    traj = integrate_external(f, g, xi, 1e6)
    verdict, rs = rate_verdict(f, g, traj, inv, tol_lambda=tol_lambda)
    exp_kind, exp_lam = expected_cell(beta, q, xi)
    cell_ok = (
        verdict.observed.kind == exp_kind
        and (exp_kind != "Preserved" or verdict.observed.lam == exp_lam)
        and verdict.agreement
    )
    deriv_term = float(rs.deriv_ratio[-1]) if rs.deriv_ratio is not None else math.nan
    return {
        "beta": beta, "q": q, "xi": xi,
        "observed": verdict.observed.kind, "lambda": verdict.observed.lam,
        "predicted": verdict.predicted.kind, "agreement": verdict.agreement,
        "expected": exp_kind, "expected_lambda": exp_lam,
        "liminf": verdict.liminf_ratio, "limsup": verdict.limsup_ratio,
        "deriv_ratio_terminal": deriv_term,
        "ok": cell_ok,
    }


def golden_matrix_cells(tol_lambda: float = 0.05, threads: int = 1) -> list[dict]:
    """Run all 12 matrix cells; aggregation order is fixed regardless of workers."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda c: _matrix_cell(*c, tol_lambda), GOLDEN_MATRIX))
    return [_matrix_cell(*c, tol_lambda) for c in GOLDEN_MATRIX]


def _criterion_7(matrix_cache: list, tol_lambda: float, threads: int) -> CriterionResult:
    def work():
        cells = golden_matrix_cells(tol_lambda, threads)
        matrix_cache.extend(cells)
        return all(c["ok"] for c in cells), cells

    (ok, cells), el = _timed(work)
    return CriterionResult(7, "golden verdict matrix (12 cells)", ok, el < 60.0, el,
                           {"tol_lambda": tol_lambda, "cells": cells})


def _criterion_8() -> CriterionResult:
    def work():
        f = nl.power(2.0)
        g = power_tail(1.0, 3.0)
        gamma, xi_p = reduce_external_to_internal(g, 1.0)
        tx = integrate_external(f, g, 1.0, 1e6, rtol=1e-10, atol=1e-13)
        tz = integrate_internal(f, gamma, xi_p, 1e6, rtol=1e-10, atol=1e-13)
        gam = np.array([gamma(float(t)) for t in tx.t])
        diff = float(np.max(np.abs(tx.x - (tz.x + gam))))
        return diff <= 1e-6, {"max_diff": diff, "xi_prime": xi_p}

    (ok, det), el = _timed(work)
    return CriterionResult(8, "external/internal reduction identity", ok, True, el,
                           {"tolerance": 1e-6, **det})


def _criterion_9(matrix_cache: list) -> CriterionResult:
    def work():
        checks = []
        ok = True
        for c in matrix_cache:
            if c["expected"] != "Preserved":
                continue
            err = abs(c["deriv_ratio_terminal"] + c["lambda"]) if c["lambda"] is not None else math.inf
            ok = ok and err <= 0.1
            checks.append({"beta": c["beta"], "q": c["q"], "xi": c["xi"],
                           "deriv_ratio": c["deriv_ratio_terminal"], "err": err})
        return ok and len(checks) > 0, checks

    (ok, checks), el = _timed(work)
    return CriterionResult(9, "derivative-ratio consistency in preserved cells", ok, True, el,
                           {"tolerance": 0.1, "checks": checks})


def _criterion_10(seed: int, ens_cache: dict) -> CriterionResult:
    def work():
        f = nl.power(2.0)
        fm = FlowMap(f)
        inv = InverseFlow(fm)
        sigma = noise_power_tail(1.0, 2.0)
        ens = simulate_ensemble(f, sigma, 1.0, 1e4, 200, seed, inv=inv)
        rep = classify_ensemble(ens, sigma=sigma, inv=inv, tol_lambda=0.1)
        ens_cache["preserved"] = (ens, rep)
        mu_ok = rep.mu is not None and rep.mu.bucket == "zero"
        union_ok = rep.preserved_union_fraction >= 0.9
        trich_ok = rep.terminal_trichotomy_fraction >= 0.9
        majority_ok = rep.fractions.get("+1", 0.0) > rep.fractions.get("-1", 0.0)
        pin_ok = True
        if seed == 42:
            pin_ok = rep.counts == PRESERVED_PIN
        details = {
            "mu": rep.mu.as_dict() if rep.mu else None,
            "counts": rep.counts,
            "preserved_union_fraction": rep.preserved_union_fraction,
            "terminal_trichotomy_fraction": rep.terminal_trichotomy_fraction,
            "pinned": seed == 42,
            "pin_match": pin_ok,
            "lil_exceed_fraction": rep.lil_exceed_fraction,
        }
        lil_ok = (not math.isnan(rep.lil_exceed_fraction)) and rep.lil_exceed_fraction <= 0.2
        return mu_ok and union_ok and trich_ok and majority_ok and pin_ok and lil_ok, details

    (ok, details), el = _timed(work)
    return CriterionResult(10, "stochastic preserved case (pinned seed)", ok, el < 120.0, el, details)


def _criterion_11(seed: int, ens_cache: dict) -> CriterionResult:
    def work():
        f = nl.power(2.0)
        fm = FlowMap(f)
        inv = InverseFlow(fm)
        sigma = noise_constant(1.0)
        ens = simulate_ensemble(f, sigma, 1.0, 1e4, 200, seed, inv=inv)
        rep = classify_ensemble(ens, sigma=sigma, inv=inv, tol_lambda=0.1)
        ens_cache["exclusion"] = (ens, rep)
        frac = rep.fractions.get("unresolved", 0.0) + rep.fractions.get("divergent", 0.0)
        pin_ok = rep.counts == EXCLUSION_PIN if seed == 42 else True
        mu = estimate_mu(sigma, inv)
        details = {"counts": rep.counts, "excluded_fraction": frac,
                   "mu_bucket": mu.bucket, "pinned": seed == 42, "pin_match": pin_ok}
        return frac >= 0.9 and pin_ok and mu.bucket == "not_applicable", details

    (ok, details), el = _timed(work)
    return CriterionResult(11, "stochastic exclusion case (pinned seed)", ok, el < 120.0, el, details)


def _criterion_12() -> CriterionResult:
    def work():
        f = nl.power(2.0)
        ens = simulate_ensemble(f, noise_constant(0.0), 1.0, 1e4, 2, 42)
        traj = integrate_external(f, zero_perturbation(), 1.0, 1e4)
        diff = float(abs(ens.terminal_states[0] - traj.x[-1]))
        return diff <= 1e-3, diff

    (ok, diff), el = _timed(work)
    return CriterionResult(12, "zero-noise reduction to the deterministic route", ok, True, el,
                           {"tolerance": 1e-3, "terminal_diff": diff})


def _determinism_payload(seed: int) -> bytes:
    """A representative deterministic artifact bundle, recomputed from scratch."""
    f = nl.power(2.0)
    fm = FlowMap(f)
    inv = InverseFlow(fm)
    g = power_tail(1.0, 3.0)
    traj = integrate_external(f, g, 1.0, 1e4)
    verdict, rs = rate_verdict(f, g, traj, inv)
    ens = simulate_ensemble(f, noise_power_tail(1.0, 2.0), 1.0, 1e2, 20, seed, inv=inv)
    table = dump_flow(inv, 1e4, 50)
    return (
        json_bytes(verdict.as_dict())
        + csv_bytes(("t", "Finv"), table)
        + csv_bytes(("t", "ratio"), zip(rs.t, rs.ratio))
        + csv_bytes(("path", "terminal"), enumerate(ens.terminal_states))
    )


def _criterion_13(seed: int) -> CriterionResult:
    def work():
        a = _determinism_payload(seed)
        b = _determinism_payload(seed)
        return a == b, {"bytes": len(a), "identical": a == b}

    (ok, details), el = _timed(work)
    return CriterionResult(13, "in-run determinism probe (byte-identical recompute)", ok, True, el, details)


def run_suite(out_dir=None, seed: int = 42, tol_lambda: float = 0.05, threads: int = 1,
              quiet: bool = False) -> SuiteResult:
    """Run all thirteen criteria; write artifacts when out_dir is given."""
    rho_cache: dict = {}
    matrix_cache: list = []
    ens_cache: dict = {}
    results = [
        _criterion_1(),
        _criterion_2(),
        _criterion_3(),
        _criterion_4(rho_cache),
        _criterion_5(rho_cache),
        _criterion_6(),
        _criterion_7(matrix_cache, tol_lambda, threads),
        _criterion_8(),
        _criterion_9(matrix_cache),
        _criterion_10(seed, ens_cache),
        _criterion_11(seed, ens_cache),
        _criterion_12(),
        _criterion_13(seed),
    ]
    policy = "pinned" if seed == 42 else "threshold-only"
    suite = SuiteResult(results=results, out_dir=Path(out_dir) if out_dir else None, seed=seed,
                        seed_policy=policy)
    if not quiet:
        for r in results:
            status = "PASS" if (r.passed and r.runtime_ok) else "FAIL"
            extra = "" if r.runtime_ok else " (runtime limit exceeded)"
            print(f"criterion {r.cid:2d} [{status}] {r.title}{extra}  ({r.elapsed:.2f}s)")
        print(f"suite: {'PASS' if suite.all_passed else 'FAIL'} (seed={seed}, policy={policy})")
    if out_dir is not None:
        files = {
            "verify_summary.json": json_bytes({
                "seed": seed,
                "seed_policy": policy,
                "tol_lambda": tol_lambda,
                "all_passed": suite.all_passed,
                "criteria": [r.record() for r in results],
            }),
            "golden_matrix.csv": csv_bytes(
                ("beta", "q", "xi", "observed", "lambda", "predicted", "agreement",
                 "expected", "liminf", "limsup"),
                [(c["beta"], c["q"], c["xi"], c["observed"],
                  "" if c["lambda"] is None else c["lambda"], c["predicted"],
                  c["agreement"], c["expected"], c["liminf"], c["limsup"])
                 for c in matrix_cache],
            ),
        }
        for name, key in (("ensemble_preserved.csv", "preserved"), ("ensemble_exclusion.csv", "exclusion")):
            if key in ens_cache:
                ens, rep = ens_cache[key]
                files[name] = csv_bytes(
                    ("path", "terminal_state", "terminal_ratio", "bucket"),
                    [(p, ens.terminal_states[p], ens.terminal_ratios[p], rep.buckets[p])
                     for p in range(ens.n_paths)],
                )
        write_artifacts(out_dir, files)
    return suite
