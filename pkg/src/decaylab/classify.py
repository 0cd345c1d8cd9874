"""Turn trajectories into decay-rate preservation verdicts.

The observed side measures the ratio x(t)/F^{-1}(t) over the terminal
window (the last decade of (1+t), last two for boundedness questions) and
buckets it into

* Preserved(lambda), lambda in {-1, 0, +1}: the ratio sits uniformly
  within tol_lambda of lambda with negligible drift,
* BoundedO: the ratio stays bounded without settling on a lambda,
* NotPreserved: the ratio exits the bound or keeps compounding,
* Inconclusive: not enough usable window.

The predicted side never looks at the trajectory: it classifies the tail
integral Gamma(t) = -integral_t^inf g against F^{-1}(t) (limit zero /
bounded-nonzero / unbounded, or a divergent integral), which is exactly
the dichotomy that decides preservation.  Agreement of the two sides is
the headline output.  The pointwise ratio g/f(F^{-1}) is also checked; it
is sufficient but not necessary for preservation and is reported as
evidence only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .flow import InverseFlow
from .nonlinearity import NonlinearitySpec
from .ode_sim import PerturbationSpec, Trajectory, gamma_of

__all__ = [
    "RatioSeries",
    "Verdict",
    "RateVerdict",
    "ConditionEvidence",
    "series_from_arrays",
    "ratio_series",
    "estimate_lambda",
    "check_condition_a",
    "check_condition_c",
    "predict",
    "verdicts_agree",
    "rate_verdict",
]

PRESERVED = "Preserved"
BOUNDED_O = "BoundedO"
NOT_PRESERVED = "NotPreserved"
INCONCLUSIVE = "Inconclusive"

# trichotomy thresholds for terminal limit diagnostics (per decade of (1+t))
DECAY_FACTOR = 0.5
GROWTH_FACTOR = 2.0
ABS_ZERO = 1e-9
# a |ratio| envelope that at least doubles per decade across the window is growth
ENVELOPE_GROWTH = 4.0


@dataclass(frozen=True)
class RatioSeries:
    """x(t)/F^{-1}(t) on the trajectory grid, plus derivative ratios."""

    t: np.ndarray
    ratio: np.ndarray
    deriv_ratio: np.ndarray | None
    window_min: float
    window_max: float
    window_mean: float
    drift_per_decade: float
    window_decades: float


def _window_mask(t: np.ndarray, decades: float) -> np.ndarray:
    top = 1.0 + t[-1]
    return (1.0 + t) >= top / 10.0**decades


def series_from_arrays(t: np.ndarray, ratio: np.ndarray, deriv_ratio: np.ndarray | None = None) -> RatioSeries:
    """Assemble a RatioSeries with terminal-window stats from raw arrays."""
    t = np.asarray(t, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    w = _window_mask(t, 1.0)
    rw = ratio[w]
    finite = np.all(np.isfinite(rw))
    logt = np.log10(1.0 + t[w])
    drift = float(np.polyfit(logt, rw, 1)[0]) if (np.sum(w) >= 3 and finite) else math.nan
    return RatioSeries(
        t=t,
        ratio=ratio,
        deriv_ratio=deriv_ratio,
        window_min=float(np.min(rw)) if finite else math.nan,
        window_max=float(np.max(rw)) if finite else math.nan,
        window_mean=float(np.mean(rw)) if finite else math.nan,
        drift_per_decade=drift,
        window_decades=1.0,
    )


def ratio_series(traj: Trajectory, inv: InverseFlow, f: NonlinearitySpec) -> RatioSeries:
    """Pointwise ratios on the sub-grid where the inverse flow is defined."""
    finv = np.empty_like(traj.t)
    usable = len(traj.t)
    for i, tv in enumerate(traj.t):
        try:
            finv[i] = inv.compute(float(tv))
        except DomainError:
            usable = i
            break
    t = traj.t[:usable]
    if usable < 2 or math.log10((1.0 + t[-1]) / (1.0 + t[0])) < 2.0:
        hi = t[-1] if usable else 0.0
        raise DomainError(
            f"trajectory and inverse flow overlap only on t in [0, {hi:.6g}] "
            "(need at least two decades)"
        )
    finv = finv[:usable]
    ratio = traj.x[:usable] / finv
    deriv_ratio = traj.deriv[:usable] / np.array([f.eval(v) for v in finv])
    return series_from_arrays(t, ratio, deriv_ratio)


@dataclass(frozen=True)
class Verdict:
    kind: str
    lam: int | None = None

    def as_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam}


def estimate_lambda(
    rs: RatioSeries,
    tol_lambda: float = 0.05,
    drift_tol: float = 0.01,
    c_bound: float = 10.0,
) -> Verdict:
    """Bucket the terminal-window ratios into the verdict enumeration.

    Total function: every usable series lands in exactly one bucket.
    """
    t, ratio = rs.t, rs.ratio
    w1 = _window_mask(t, 1.0)
    if int(np.sum(w1)) < 4 or not np.all(np.isfinite(ratio[w1])):
        return Verdict(INCONCLUSIVE)
    r1 = ratio[w1]
    lam = int(round(float(np.clip(np.mean(r1), -1.0, 1.0))))
    if float(np.max(np.abs(r1 - lam))) <= tol_lambda and abs(rs.drift_per_decade) <= drift_tol:
        return Verdict(PRESERVED, lam)

    w2 = _window_mask(t, 2.0)
    r2 = np.abs(ratio[w2])
    if not np.all(np.isfinite(r2)):
        return Verdict(INCONCLUSIVE)
    if float(np.max(r2)) >= c_bound:
        return Verdict(NOT_PRESERVED)
    # envelope over half-decade bins of the last two decades
    edges = 1.0 + t[w2]
    bins = np.floor(2.0 * np.log10(edges / edges[0]) - 1e-12).astype(int)
    env = np.array([np.max(r2[bins == b]) for b in range(int(bins.max()) + 1) if np.any(bins == b)])
    if len(env) >= 3 and np.all(np.diff(env) > 0) and env[-1] >= ENVELOPE_GROWTH * env[0]:
        return Verdict(NOT_PRESERVED)
    return Verdict(BOUNDED_O)


@dataclass(frozen=True)
class ConditionEvidence:
    name: str
    verdict: str  # zero | bounded_nonzero | unbounded | divergent
    t: np.ndarray
    values: np.ndarray
    terminal_value: float
    decade_factor: float
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "terminal_value": self.terminal_value,
            "decade_factor": self.decade_factor,
            "note": self.note,
        }


def _limit_verdict(ts: np.ndarray, values: np.ndarray) -> tuple[str, float]:
    """Trichotomy of a terminal ratio by per-decade magnitude factors."""
    mags = np.abs(values)
    if float(np.max(mags)) <= ABS_ZERO:
        return "zero", 0.0
    top = 1.0 + ts[-1]
    decade = np.floor(np.log10(top / (1.0 + ts)) + 1e-12).astype(int)
    means = []
    for d in sorted(set(decade), reverse=True):
        sel = decade == d
        if np.any(sel):
            means.append(float(np.mean(mags[sel])))
    if len(means) < 2:
        return "bounded_nonzero", 1.0
    factors = [b / a for a, b in zip(means, means[1:]) if a > 0.0]
    gm = float(np.exp(np.mean(np.log(factors)))) if factors else 1.0
    if gm <= DECAY_FACTOR or means[-1] <= ABS_ZERO:
        return "zero", gm
    if gm >= GROWTH_FACTOR:
        return "unbounded", gm
    return "bounded_nonzero", gm


def _window_grid(t_hi: float, decades: float = 3.0, per_decade: int = 8) -> np.ndarray:
    t_lo = max(1.0, t_hi / 10.0**decades)
    n = max(6, int(round(per_decade * math.log10(t_hi / t_lo))) + 1)
    return np.geomspace(t_lo, t_hi, n)


def check_condition_a(
    g: PerturbationSpec, inv: InverseFlow, t_hi: float = 1e6, per_decade: int = 8
) -> ConditionEvidence:
    """Classify Gamma(t)/F^{-1}(t): zero, bounded-nonzero, or unbounded.

    A divergent integral of g short-circuits to the 'divergent' verdict.
    """
    if not g.has_convergent_integral:
        return ConditionEvidence(
            name="tail_integral_vs_inverse",
            verdict="divergent",
            t=np.array([]),
            values=np.array([]),
            terminal_value=math.nan,
            decade_factor=math.nan,
            note="integral of g has no finite limit",
        )
    ts = _window_grid(t_hi, per_decade=per_decade)
    vals = np.array([gamma_of(g, float(tv)) / inv.compute(float(tv)) for tv in ts])
    verdict, factor = _limit_verdict(ts, vals)
    return ConditionEvidence(
        name="tail_integral_vs_inverse",
        verdict=verdict,
        t=ts,
        values=vals,
        terminal_value=float(vals[-1]),
        decade_factor=factor,
    )


def check_condition_c(
    g: PerturbationSpec,
    f: NonlinearitySpec,
    inv: InverseFlow,
    t_hi: float = 1e6,
    per_decade: int = 8,
) -> ConditionEvidence:
    """Classify the pointwise ratio g(t)/f(F^{-1}(t)) (sufficient only)."""
    ts = _window_grid(t_hi, per_decade=per_decade)
    vals = np.array([g.g(float(tv)) / f.eval(inv.compute(float(tv))) for tv in ts])
    verdict, factor = _limit_verdict(ts, vals)
    return ConditionEvidence(
        name="pointwise_forcing_vs_drift",
        verdict=verdict,
        t=ts,
        values=vals,
        terminal_value=float(vals[-1]),
        decade_factor=factor,
        note="sufficient, not necessary, for preservation",
    )


def predict(evidence_a: ConditionEvidence) -> Verdict:
    """Predicted verdict from the tail-integral evidence alone."""
    if evidence_a.verdict == "zero":
        return Verdict(PRESERVED)
    if evidence_a.verdict == "bounded_nonzero":
        return Verdict(BOUNDED_O)
    if evidence_a.verdict in ("unbounded", "divergent"):
        return Verdict(NOT_PRESERVED)
    return Verdict(INCONCLUSIVE)


def verdicts_agree(observed: Verdict, predicted: Verdict) -> bool:
    """Consistency of observation with prediction.

    A predicted Preserved matches any observed lambda.  A predicted
    NotPreserved only certifies "observed is not Preserved" (the theory
    does not say which failure shape the trajectory takes).
    """
    if observed.kind == INCONCLUSIVE or predicted.kind == INCONCLUSIVE:
        return False
    if predicted.kind == PRESERVED:
        return observed.kind == PRESERVED
    if predicted.kind == BOUNDED_O:
        return observed.kind == BOUNDED_O
    return observed.kind in (BOUNDED_O, NOT_PRESERVED)


@dataclass(frozen=True)
class RateVerdict:
    observed: Verdict
    predicted: Verdict
    liminf_ratio: float
    limsup_ratio: float
    drift_per_decade: float
    evidence: tuple[ConditionEvidence, ...]
    agreement: bool
    decay_confirmed: bool
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "observed": self.observed.as_dict(),
            "predicted": self.predicted.as_dict(),
            "lambda": self.observed.lam,
            "liminf": self.liminf_ratio,
            "limsup": self.limsup_ratio,
            "drift_per_decade": self.drift_per_decade,
            "evidence": [e.as_dict() for e in self.evidence],
            "agreement": self.agreement,
            "decay_confirmed": self.decay_confirmed,
        }


def rate_verdict(
    f: NonlinearitySpec,
    g: PerturbationSpec,
    traj: Trajectory,
    inv: InverseFlow,
    tol_lambda: float = 0.05,
    drift_tol: float = 0.01,
    c_bound: float = 10.0,
) -> tuple[RateVerdict, RatioSeries]:
    """Full pipeline: ratios, observed bucket, condition checks, agreement.

    Convergence of x(t) to 0 is recorded as a separate flag instead of
    being assumed (the equivalences presuppose it)."""
    rs = ratio_series(traj, inv, f)
    observed = estimate_lambda(rs, tol_lambda=tol_lambda, drift_tol=drift_tol, c_bound=c_bound)
    ev_a = check_condition_a(g, inv, t_hi=float(rs.t[-1]))
    ev_c = check_condition_c(g, f, inv, t_hi=float(rs.t[-1]))
    predicted = predict(ev_a)
    w = _window_mask(traj.t, 1.0)
    decay = bool(
        abs(traj.x[-1]) < max(abs(traj.x[0]), 1e-300)
        and np.max(np.abs(traj.x[w])) <= np.max(np.abs(traj.x))
    )
    verdict = RateVerdict(
        observed=observed,
        predicted=predicted,
        liminf_ratio=rs.window_min,
        limsup_ratio=rs.window_max,
        drift_per_decade=rs.drift_per_decade,
        evidence=(ev_a, ev_c),
        agreement=verdicts_agree(observed, predicted),
        decay_confirmed=decay,
        meta={"tol_lambda": tol_lambda, "drift_tol": drift_tol, "c_bound": c_bound},
    )
    return verdict, rs
