"""Mean-reversion nonlinearities and their small-scale asymptotics.

The objects of study are odd, increasing, continuous functions f with
f(0) = 0 and x f(x) > 0 away from the origin.  How fast f vanishes at 0
decides how fast solutions of x' = -f(x) decay, so this module provides

* a catalog of nonlinearities (power |x|^beta with beta > 1, linear,
  the very flat exp(-1/x), and user-supplied tables/callables),
* estimators for the shrink-ratio limits of f at 0:
  the limsup of f(mu*x)/f(x)      (mu in (0,1), one value per mu),
  the liminf of f((1-eps)*x)/f(x) (eps in (0,1)),
  and the compensated ratio rho(x) = F(x) f(x)/x for a transform F,
* a regime classifier that separates power-like nonlinearities from
  those vanishing slower (at most linearly) or faster than every power.

All limits are x -> 0+.  They are estimated on geometric grids
x_k = x0 * r^k, and lim inf/sup are always taken over the *terminal
window* (the last few rungs), never the full grid; the window spread is
reported as an honesty metric.  Ratios are evaluated in log space when a
closed-form log f is available, which keeps the flat-exponential catalog
entry usable far below where f itself underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ValidationError

__all__ = [
    "ScaleGrid",
    "NonlinearitySpec",
    "LimitEstimate",
    "DecayClass",
    "Evidence",
    "RhoLimits",
    "power",
    "linear",
    "flat_exponential",
    "custom",
    "from_table",
    "eval_f",
    "validate_nonlinearity",
    "estimate_phi_bar",
    "estimate_phi_under",
    "estimate_rho_limits",
    "classify_nonlinearity",
    "check_superlinearity",
    "check_phi_bar_log_bound",
]

# Regime names (fixed vocabulary, also used in JSON reports).
POWER_LIKE = "PowerLike"
SLOWER_THAN_POWER = "SlowerThanPower"
FASTER_THAN_POWER = "FasterThanPower"
INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class ScaleGrid:
    """Geometric probe grid x_k = x0 * ratio^k, k = 0..rungs-1.

    Estimates are taken over the last `window` rungs only.
    """

    x0: float = 0.1
    ratio: float = 0.5
    rungs: int = 40
    window: int = 8

    def __post_init__(self):
        if not (0.0 < self.ratio < 1.0):
            raise ValidationError(f"grid ratio must be in (0,1), got {self.ratio}")
        if self.x0 <= 0.0 or self.rungs < 2 or self.window < 1:
            raise ValidationError("grid needs x0 > 0, rungs >= 2, window >= 1")

    def points(self) -> np.ndarray:
        return self.x0 * self.ratio ** np.arange(self.rungs, dtype=float)


@dataclass(frozen=True)
class NonlinearitySpec:
    """An odd-extended mean-reversion function.

    `eval_pos` is f on positive arguments; negative arguments go through
    the exact odd extension f(-x) = -f(x).  `log_eval_pos`, when present,
    computes log f(x) for x > 0 and lets ratio estimators work below the
    underflow threshold of f itself.  `domain` bounds the positive
    arguments that `eval_pos` accepts (custom tables have a finite inner
    edge); `delta` is the declared reach of the increasing/positive
    structure used by the validators and estimators.
    """

    kind: str
    eval_pos: Callable[[np.ndarray], np.ndarray]
    beta: float | None = None
    delta: float = 1.0
    domain: tuple[float, float] = (0.0, math.inf)
    log_eval_pos: Callable[[np.ndarray], np.ndarray] | None = None
    continuity_bound: float | None = None
    label: str = ""

    def eval(self, x):
        """Evaluate f with the odd extension; scalar in, scalar out."""
        arr = np.asarray(x, dtype=float)
        ax = np.abs(arr)
        self._check_domain(ax)
        with np.errstate(divide="ignore"):
            pos = np.where(ax > 0.0, self.eval_pos(np.where(ax > 0.0, ax, 1.0)), 0.0)
        out = np.copysign(pos, arr)
        return float(out) if np.isscalar(x) or arr.ndim == 0 else out

    __call__ = eval

    def log_ratio(self, num: np.ndarray, den: np.ndarray) -> np.ndarray | None:
        """f(num)/f(den) for positive args via log space, or None."""
        if self.log_eval_pos is None:
            return None
        return np.exp(self.log_eval_pos(num) - self.log_eval_pos(den))

    def _check_domain(self, ax: np.ndarray) -> None:
        lo, hi = self.domain
        bad = (ax > hi) | ((ax > 0.0) & (ax < lo))
        if np.any(bad):
            worst = float(np.asarray(ax)[np.asarray(bad)].flat[0])
            raise DomainError(
                f"{self.label or self.kind}: argument {worst:.6g} outside domain ({lo:.6g}, {hi:.6g}]"
            )

    def clip_to_domain(self, xs: np.ndarray, shrink: float = 1.0) -> np.ndarray:
        """Keep grid points whose scaled copies shrink*xs stay evaluable."""
        lo, hi = self.domain
        keep = (xs <= hi) & (xs * shrink >= lo) & (xs * shrink > 0.0)
        return xs[keep]


def power(beta: float, validate: bool = True) -> NonlinearitySpec:
    """f(x) = |x|^beta sign(x), beta > 1."""
    if not beta > 1.0:
        raise ValidationError(f"power nonlinearity needs beta > 1, got {beta}")
    b = float(beta)
    spec = NonlinearitySpec(
        kind="power",
        beta=b,
        eval_pos=lambda x: np.power(x, b),
        log_eval_pos=lambda x: b * np.log(x),
        label=f"power(beta={b:g})",
    )
    if validate:
        validate_nonlinearity(spec)
    return spec


def linear(validate: bool = True) -> NonlinearitySpec:
    """f(x) = x; the boundary case between power-like and steeper decay."""
    spec = NonlinearitySpec(
        kind="linear",
        eval_pos=lambda x: x,
        log_eval_pos=np.log,
        label="linear",
    )
    if validate:
        validate_nonlinearity(spec)
    return spec


def flat_exponential(validate: bool = True) -> NonlinearitySpec:
    """f(x) = exp(-1/x) for x > 0; all derivatives vanish at 0."""
    spec = NonlinearitySpec(
        kind="flat_exponential",
        eval_pos=lambda x: np.exp(-1.0 / x),
        log_eval_pos=lambda x: -1.0 / x,
        label="flat_exponential",
    )
    if validate:
        validate_nonlinearity(spec)
    return spec


def custom(
    fn: Callable[[np.ndarray], np.ndarray],
    delta: float,
    domain: tuple[float, float] = (0.0, math.inf),
    log_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    continuity_bound: float | None = None,
    label: str = "custom",
    validate: bool = True,
) -> NonlinearitySpec:
    """Wrap a user callable defined on positive arguments."""
    if delta <= 0.0:
        raise ValidationError("custom nonlinearity needs a declared delta > 0")
    spec = NonlinearitySpec(
        kind="custom",
        eval_pos=fn,
        delta=float(delta),
        domain=(float(domain[0]), float(domain[1])),
        log_eval_pos=log_fn,
        continuity_bound=continuity_bound,
        label=label,
    )
    if validate:
        validate_nonlinearity(spec)
    return spec


def from_table(
    xs: Sequence[float],
    ys: Sequence[float],
    continuity_bound: float | None = None,
    label: str = "custom(table)",
    validate: bool = True,
) -> NonlinearitySpec:
    """Build a custom spec from sampled (x, f(x)) pairs, x strictly increasing.

    The table is interpolated with a shape-preserving monotone cubic, so
    monotonicity of the samples carries over to the evaluator.
    """
    from scipy.interpolate import PchipInterpolator

    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 4:
        raise ValidationError("table needs matching 1-d x and f(x) columns with >= 4 rows")
    if not np.all(np.diff(x) > 0.0):
        raise ValidationError("table x values must be strictly increasing")
    if x[0] <= 0.0:
        raise ValidationError("table x values must be positive")
    if not np.all(y > 0.0):
        raise ValidationError("table f(x) values must be positive for x > 0")
    if not np.all(np.diff(y) > 0.0):
        raise ValidationError("table f(x) values must be strictly increasing")
    interp = PchipInterpolator(x, y, extrapolate=False)
    if continuity_bound is None:
        continuity_bound = 4.0 * float(np.max(np.diff(y)))
    spec = NonlinearitySpec(
        kind="custom",
        eval_pos=lambda t: np.asarray(interp(t), dtype=float),
        delta=float(x[-1]),
        domain=(float(x[0]), float(x[-1])),
        continuity_bound=continuity_bound,
        label=label,
    )
    if validate:
        validate_nonlinearity(spec)
    return spec


def eval_f(spec: NonlinearitySpec, x):
    """Evaluate the odd-extended nonlinearity at x."""
    return spec.eval(x)


def validate_nonlinearity(spec: NonlinearitySpec, samples: int = 32) -> None:
    """Check positivity, strict increase, exact oddness, and continuity.

    The checks run on a geometric sample grid inside (0, delta] clipped to
    the spec's domain; they are necessarily finite-sample.
    """
    lo, hi = spec.domain
    top = min(spec.delta, hi)
    bottom = max(lo, top * 0.5**(samples - 1))
    if not (0.0 <= bottom < top):
        raise ValidationError(f"{spec.label}: empty validation range ({bottom:g}, {top:g}]")
    if bottom == 0.0:
        bottom = top * 0.5**(samples - 1)
    grid = np.geomspace(bottom, top, samples)
    vals = np.asarray(spec.eval_pos(grid), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValidationError(f"{spec.label}: non-finite values on validation grid")
    # f may underflow to 0 at the smallest scales; the usable suffix decides
    usable = vals > 0.0
    if not usable[-1]:
        raise ValidationError(f"{spec.label}: f(delta) <= 0")
    start = int(np.argmax(usable)) if not np.all(usable) else 0
    if np.any(vals[start:] <= 0.0) or np.any(vals[:start] < 0.0):
        raise ValidationError(f"{spec.label}: f(x) <= 0 somewhere on (0, delta]")
    if len(vals) - start < 8:
        raise ValidationError(f"{spec.label}: fewer than 8 representable samples on (0, delta]")
    if not np.all(np.diff(vals[start:]) > 0.0):
        raise ValidationError(f"{spec.label}: f not strictly increasing on (0, delta]")
    grid = grid[start:]
    vals = vals[start:]
    if spec.kind == "custom" and spec.continuity_bound is not None:
        jump = float(np.max(np.abs(np.diff(vals))))
        if jump > spec.continuity_bound:
            raise ValidationError(
                f"{spec.label}: sampled jump {jump:.3g} exceeds continuity bound "
                f"{spec.continuity_bound:.3g}"
            )
    # odd extension must be exact, not approximately symmetric
    for x in grid[:: max(1, samples // 8)]:
        if spec.eval(-x) != -spec.eval(x):
            raise ValidationError(f"{spec.label}: odd extension not exact at x={x:g}")
    if spec.eval(0.0) != 0.0:
        raise ValidationError(f"{spec.label}: f(0) != 0")


# ---------------------------------------------------------------------------
# limit estimates on scale grids


@dataclass(frozen=True)
class LimitEstimate:
    """Terminal-window liminf/limsup estimate of a ratio along a scale grid."""

    scale_grid: np.ndarray
    values: np.ndarray
    liminf_est: float
    limsup_est: float
    window_spread: float
    trend: float
    window: int
    truncated: bool = False
    note: str = ""


def _window_estimate(xs, vals, window, truncated=False, note="") -> LimitEstimate:
    n = len(vals)
    if n == 0:
        raise DomainError("no usable grid rungs: " + (note or "empty grid"))
    w = min(window, n)
    tail = np.asarray(vals[n - w:], dtype=float)
    lo, hi = float(np.min(tail)), float(np.max(tail))
    trend = 0.0
    if w >= 2:
        trend = float(np.polyfit(np.arange(w, dtype=float), tail, 1)[0])
    return LimitEstimate(
        scale_grid=np.asarray(xs, dtype=float),
        values=np.asarray(vals, dtype=float),
        liminf_est=lo,
        limsup_est=hi,
        window_spread=hi - lo,
        trend=trend,
        window=w,
        truncated=truncated,
        note=note,
    )


def _shrink_ratios(f: NonlinearitySpec, xs: np.ndarray, factor: float):
    """Samples of f(factor*x)/f(x), with underflow truncation when needed."""
    logr = f.log_ratio(factor * xs, xs)
    if logr is not None:
        return np.asarray(logr, dtype=float), False, ""
    den = f.eval_pos(xs)
    num = f.eval_pos(factor * xs)
    good = np.isfinite(den) & (den > 0.0) & np.isfinite(num)
    n = int(np.argmin(good)) if not np.all(good) else len(xs)
    if n < len(xs):
        return (num[:n] / den[:n]), True, f"grid truncated at x={xs[n]:.3g} (f underflow)"
    return num / den, False, ""


def _clipped_grid(f: NonlinearitySpec, grid: ScaleGrid, shrink: float = 1.0) -> np.ndarray:
    xs = grid.points()
    xs = xs[xs <= min(f.delta, f.domain[1])]
    xs = f.clip_to_domain(xs, shrink=shrink)
    if len(xs) == 0:
        raise DomainError(f"{f.label}: scale grid does not intersect the usable domain")
    return xs


def estimate_phi_bar(f: NonlinearitySpec, mu: float, grid: ScaleGrid = ScaleGrid()) -> LimitEstimate:
    """Estimate the limsup of f(mu*x)/f(x) as x -> 0+ for mu in (0,1).

    For increasing f every sample lies in (0, 1]; the limsup estimate is
    the terminal-window maximum.
    """
    if not (0.0 < mu < 1.0):
        raise DomainError(f"mu must be in (0,1), got {mu}")
    xs = _clipped_grid(f, grid, shrink=mu)
    vals, truncated, note = _shrink_ratios(f, xs, mu)
    return _window_estimate(xs[: len(vals)], vals, grid.window, truncated, note)


def estimate_phi_under(f: NonlinearitySpec, eps: float, grid: ScaleGrid = ScaleGrid()) -> LimitEstimate:
    """Estimate the liminf of f((1-eps)*x)/f(x) as x -> 0+ for eps in (0,1).

    The asymptotic-preserving verdict needs this liminf to approach 1 as
    eps -> 0; callers probe a small eps ladder and check the approach
    (a finite-sample check of the limit, by design).
    """
    if not (0.0 < eps < 1.0):
        raise DomainError(f"eps must be in (0,1), got {eps}")
    xs = _clipped_grid(f, grid, shrink=1.0 - eps)
    vals, truncated, note = _shrink_ratios(f, xs, 1.0 - eps)
    return _window_estimate(xs[: len(vals)], vals, grid.window, truncated, note)


@dataclass(frozen=True)
class RhoLimits:
    """Terminal-window liminf (l) and limsup (L) of rho(x) = F(x) f(x)/x."""

    l: float
    L: float
    estimate: LimitEstimate


def estimate_rho_limits(f: NonlinearitySpec, flow, grid: ScaleGrid = ScaleGrid()) -> RhoLimits:
    """Estimate liminf/limsup of rho(x) = F(x) f(x)/x over the terminal window.

    Finite positive limits characterise the power-like regime; rho -> 0
    signals a flatter-than-power f, rho -> infinity an at-most-linear one.
    The flow map's own domain floor truncates the grid when F becomes
    uncomputable (the truncation is flagged).
    """
    xs = _clipped_grid(f, grid)
    vals = []
    truncated = False
    note = ""
    for x in xs:
        try:
            fx = flow.compute_F(float(x))
        except DomainError as exc:
            truncated, note = True, f"flow domain floor reached: {exc}"
            break
        vals.append(fx * f.eval_pos(np.asarray(x)) / x)
    est = _window_estimate(xs[: len(vals)], np.asarray(vals, dtype=float), grid.window, truncated, note)
    return RhoLimits(l=est.liminf_est, L=est.limsup_est, estimate=est)


# ---------------------------------------------------------------------------
# regime classification


@dataclass(frozen=True)
class Evidence:
    test: str
    outcome: str
    margin: float


@dataclass(frozen=True)
class DecayClass:
    regime: str
    evidence: tuple[Evidence, ...] = field(default_factory=tuple)

    def find(self, test: str) -> Evidence | None:
        for e in self.evidence:
            if e.test == test:
                return e
        return None


def _direction(f: NonlinearitySpec, eta: float, xs: np.ndarray, band: float) -> tuple[str, float]:
    """Monotonicity of x -> f(x)/x^(1+eta) over the window, with margin.

    Returns one of increasing/decreasing/flat/mixed (in x), judged on log
    steps with a relative dead band.
    """
    if f.log_eval_pos is not None:
        logr = f.log_eval_pos(xs) - (1.0 + eta) * np.log(xs)
    else:
        vals = f.eval_pos(xs)
        good = np.isfinite(vals) & (vals > 0.0)
        xs, vals = xs[good], vals[good]
        if len(xs) < 3:
            return "mixed", 0.0
        logr = np.log(vals) - (1.0 + eta) * np.log(xs)
    d = np.diff(logr)  # step from rung k to k+1, i.e. toward smaller x
    if len(d) == 0:
        return "mixed", 0.0
    dmin, dmax = float(np.min(d)), float(np.max(d))
    if abs(dmin) <= band and abs(dmax) <= band:
        return "flat", band - max(abs(dmin), abs(dmax))
    if dmax <= band and dmin <= -band:
        return "increasing", -dmax  # increasing in x: all steps down toward 0
    if dmin >= -band and dmax >= band:
        return "decreasing", dmin
    return "mixed", 0.0


def classify_nonlinearity(
    f: NonlinearitySpec,
    grid: ScaleGrid = ScaleGrid(),
    margin: float = 0.05,
    mu_ladder: Sequence[float] = (0.5, 0.25, 0.125),
    eps_ladder: Sequence[float] = (0.1, 0.01, 0.001),
    eta_ladder: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
) -> DecayClass:
    """Classify f as PowerLike / SlowerThanPower / FasterThanPower.

    Combines monotonicity probes of x -> f(x)/x^(1+eta) on the terminal
    window with the shrink-ratio estimates.  PowerLike demands both a
    strictly increasing and a strictly decreasing eta rung plus passing
    shrink-ratio gates with positive margin; any conflicting or in-band
    evidence yields Indeterminate rather than a guess.
    """
    xs_full = _clipped_grid(f, grid)
    w = min(grid.window, len(xs_full))
    xs = xs_full[len(xs_full) - w:]
    band = math.log1p(margin)

    evidence: list[Evidence] = []
    dir0, m0 = _direction(f, 0.0, xs, band)
    evidence.append(Evidence("monotone[f/x]", dir0, m0))
    inc, dec, mixed = [], [], []
    for eta in eta_ladder:
        d, m = _direction(f, eta, xs, band)
        evidence.append(Evidence(f"monotone[f/x^(1+{eta:g})]", d, m))
        if d == "increasing":
            inc.append(eta)
        elif d == "decreasing":
            dec.append(eta)
        elif d == "mixed":
            mixed.append(eta)

    phi_bar = {mu: estimate_phi_bar(f, mu, grid) for mu in mu_ladder}
    pb_margins = [(mu - est.limsup_est) / mu for mu, est in phi_bar.items()]
    pb_below = all(m >= margin for m in pb_margins)
    pb_at_or_above = all(m <= margin for m in pb_margins)
    pb_vanishing = all(est.limsup_est <= margin * mu for mu, est in phi_bar.items())
    for mu, est in phi_bar.items():
        evidence.append(Evidence(f"shrink_limsup[mu={mu:g}]", f"{est.limsup_est:.6g}", (mu - est.limsup_est) / mu))

    under = [estimate_phi_under(f, eps, grid) for eps in eps_ladder]
    vals = [u.liminf_est for u in under]
    eps_min = min(eps_ladder)
    approaches_one = all(b >= a - 1e-12 for a, b in zip(vals, vals[1:])) and vals[-1] >= 1.0 - 20.0 * eps_min
    clearly_away = vals[-1] <= 0.5
    for eps, u in zip(eps_ladder, under):
        evidence.append(Evidence(f"shrink_liminf[eps={eps:g}]", f"{u.liminf_est:.6g}", u.liminf_est - (1.0 - 20.0 * eps)))
    evidence.append(Evidence("shrink_liminf->1", "pass" if approaches_one else "fail", vals[-1] - (1.0 - 20.0 * eps_min)))

    power_pattern = bool(inc) and bool(dec) and not mixed
    slower_pattern = (
        dir0 == "decreasing"
        or (dir0 in ("increasing", "flat") and not inc and not mixed and bool(dec))
    )
    faster_pattern = len(inc) == len(eta_ladder)

    if power_pattern and pb_below and approaches_one:
        regime = POWER_LIKE
    elif slower_pattern and pb_at_or_above and approaches_one:
        regime = SLOWER_THAN_POWER
    elif faster_pattern and pb_vanishing and clearly_away:
        regime = FASTER_THAN_POWER
    else:
        regime = INDETERMINATE
    return DecayClass(regime=regime, evidence=tuple(evidence))


@dataclass(frozen=True)
class SuperlinearityReport:
    """Decay of delta(x) = f(x)/x across the grid (superlinear smallness of f)."""

    values: np.ndarray
    scale_grid: np.ndarray
    decreasing: bool
    terminal_over_initial: float
    passed: bool


def check_superlinearity(f: NonlinearitySpec, grid: ScaleGrid = ScaleGrid(), shrink_factor: float = 0.1) -> SuperlinearityReport:
    """Check that delta(x) = f(x)/x keeps decreasing toward 0 along the grid.

    Failure is not an error: it is evidence against a PowerLike call (the
    linear case has constant delta), so it is reported, not raised.
    """
    xs = _clipped_grid(f, grid)
    if f.log_eval_pos is not None:
        logd = f.log_eval_pos(xs) - np.log(xs)
        finite = np.isfinite(logd)
        xs, logd = xs[finite], logd[finite]
        vals = np.exp(logd)
    else:
        vals = f.eval_pos(xs) / xs
        good = np.isfinite(vals) & (vals > 0)
        xs, vals = xs[good], vals[good]
    w = min(grid.window, len(vals))
    tail = vals[len(vals) - w:]
    decreasing = bool(np.all(np.diff(tail) < 0.0))
    ratio = float(vals[-1] / vals[0]) if len(vals) >= 2 else 1.0
    return SuperlinearityReport(
        values=vals,
        scale_grid=xs,
        decreasing=decreasing,
        terminal_over_initial=ratio,
        passed=decreasing and ratio <= shrink_factor,
    )


@dataclass(frozen=True)
class LogBoundReport:
    """Fit of the smallest C with shrink_limsup(mu) <= C*mu/log(1/mu)."""

    mus: tuple[float, ...]
    phi_bar: tuple[float, ...]
    required_c: tuple[float, ...]
    fitted_c: float
    slack: tuple[float, ...]
    bounded: bool


def check_phi_bar_log_bound(
    f: NonlinearitySpec,
    mu_ladder: Sequence[float] = tuple(2.0 ** -k for k in range(1, 9)),
    grid: ScaleGrid = ScaleGrid(),
) -> LogBoundReport:
    """Fit C in shrink_limsup(mu) <= C*mu/log(1/mu) across a mu ladder.

    For genuinely power-like f the per-mu required C shrinks as mu -> 0
    (the shrink ratio is o(mu)); a required-C sequence that grows down the
    whole ladder marks the bound as violated in the limit, which is what
    the linear case produces.
    """
    mus = tuple(float(m) for m in mu_ladder)
    ests = [estimate_phi_bar(f, mu, grid).limsup_est for mu in mus]
    required = [e * math.log(1.0 / mu) / mu for mu, e in zip(mus, ests)]
    fitted = max(required)
    slack = [fitted * mu / math.log(1.0 / mu) - e for mu, e in zip(mus, ests)]
    growing = all(b > a * (1.0 + 1e-9) for a, b in zip(required, required[1:]))
    return LogBoundReport(
        mus=mus,
        phi_bar=tuple(ests),
        required_c=tuple(required),
        fitted_c=fitted,
        slack=tuple(slack),
        bounded=not growing,
    )
