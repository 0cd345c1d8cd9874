"""Euler-Maruyama ensembles for dX = -f(X) dt + sigma(t) dB(t).

Brownian increments need true time steps (variance = dt), so the log-time
substitution used for the deterministic runs does not apply here.
Instead the grid is piecewise uniform over dyadic segments: step dt_k on
[2^k, 2^(k+1)) with dt_k = min(dt_max, 2^k / n_seg) (and the same rule on
the leading segment [0, 1)).  That approximates log-uniform cost while
keeping increment variances exact.

Reproducibility contract: increments for path p are drawn from a
counter-based generator keyed by (seed, p); the step index is the
position in that stream.  Paths are therefore independent streams that
any worker can regenerate, results are invariant to chunk sizes and
worker counts, and a fixed seed pins every number in the ensemble.

The iterated-logarithm envelope of the tail noise is
Sigma(t) = sqrt(2 I(t) loglog(1/I(t))) with I(t) = integral_t^inf
sigma^2(s) ds, defined once I(t) < 1/e; the limit mu of Sigma/F^{-1}
separates ensembles that inherit the deterministic decay rate (mu = 0)
from those that cannot (mu > 0, or sigma not square-integrable at all).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .classify import estimate_lambda, series_from_arrays
from .errors import DomainError, ValidationError
from .flow import FlowMap, InverseFlow
from .nonlinearity import NonlinearitySpec

__all__ = [
    "NoiseSpec",
    "PathEnsemble",
    "EnsembleReport",
    "noise_power_tail",
    "noise_constant",
    "noise_custom",
    "sigma_tail_integral",
    "sigma_envelope_start",
    "compute_Sigma",
    "estimate_mu",
    "MuEstimate",
    "build_segments",
    "simulate_ensemble",
    "classify_ensemble",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Time-dependent noise intensity sigma(t) with a declared tail model."""

    form: str  # power_tail | constant | custom
    sigma_eval: Callable[[np.ndarray], np.ndarray]
    c: float = 0.0
    p: float = 0.0
    envelope: tuple[float, float] | None = None  # (A, p) bounding |sigma|
    tail_tol: float = 1e-12
    label: str = ""

    def sigma(self, t):
        out = self.sigma_eval(np.asarray(t, dtype=float))
        return float(out) if np.isscalar(t) else np.asarray(out, dtype=float)

    @property
    def is_zero(self) -> bool:
        return (self.form in ("constant", "power_tail")) and self.c == 0.0

    @property
    def in_L2(self) -> bool:
        """Whether sigma is square-integrable on [0, inf)."""
        if self.is_zero:
            return True
        if self.form == "power_tail":
            return self.p > 0.5
        if self.form == "constant":
            return False
        return self.envelope is not None and self.envelope[1] > 0.5


def noise_power_tail(c: float, p: float) -> NoiseSpec:
    """sigma(t) = c (1+t)^(-p); square-integrable exactly when p > 1/2."""
    c, p = float(c), float(p)
    return NoiseSpec(
        form="power_tail",
        sigma_eval=lambda t: c * (1.0 + t) ** (-p),
        c=c,
        p=p,
        label=f"noise_power_tail(c={c:g}, p={p:g})",
    )


def noise_constant(c: float) -> NoiseSpec:
    return NoiseSpec(
        form="constant",
        sigma_eval=lambda t: np.full_like(np.asarray(t, dtype=float), float(c)),
        c=float(c),
        label=f"noise_constant(c={c:g})",
    )


def noise_custom(
    sigma: Callable[[np.ndarray], np.ndarray],
    envelope: tuple[float, float],
    validate_envelope: bool = True,
    label: str = "noise_custom",
) -> NoiseSpec:
    """User noise with a declared envelope |sigma(s)| <= A (1+s)^(-p)."""
    A, p = float(envelope[0]), float(envelope[1])
    if A < 0.0:
        raise ValidationError("envelope amplitude must be nonnegative")
    if validate_envelope:
        ts = np.geomspace(1e-3, 1e6, 200) - 1e-3
        sv = np.abs(np.asarray(sigma(ts), dtype=float))
        if np.any(sv > 1.001 * A * (1.0 + ts) ** (-p)):
            raise ValidationError("declared noise envelope violated on the sample grid")
    return NoiseSpec(form="custom", sigma_eval=sigma, envelope=(A, p), label=label)


def sigma_tail_integral(sigma: NoiseSpec, t: float) -> float:
    """I(t) = integral_t^inf sigma^2(s) ds; needs sigma in L2."""
    t = float(t)
    if t < 0.0:
        raise DomainError("tail integral defined for t >= 0")
    if sigma.is_zero:
        return 0.0
    if not sigma.in_L2:
        raise DomainError(f"{sigma.label}: sigma not square-integrable; tail integral undefined")
    if sigma.form == "power_tail":
        return sigma.c**2 * (1.0 + t) ** (1.0 - 2.0 * sigma.p) / (2.0 * sigma.p - 1.0)
    A, p = sigma.envelope
    if A == 0.0:
        return 0.0
    tol = sigma.tail_tol
    t_env = (2.0 * A**2 / ((2.0 * p - 1.0) * tol)) ** (1.0 / (2.0 * p - 1.0)) - 1.0
    t_cut = max(10.0 * max(t, 1.0), t_env)
    val, _ = quad(lambda s: float(sigma.sigma(s)) ** 2, t, t_cut, epsabs=tol / 2.0, epsrel=1e-10, limit=500)
    return float(val)


def sigma_envelope_start(sigma: NoiseSpec) -> float:
    """Smallest t with I(t) < 1/e (where the iterated logarithm is positive)."""
    if sigma.is_zero or not sigma.in_L2:
        raise DomainError(f"{sigma.label}: envelope start undefined")
    target = 1.0 / math.e
    if sigma_tail_integral(sigma, 0.0) < target:
        return 0.0
    if sigma.form == "power_tail":
        return (math.e * sigma.c**2 / (2.0 * sigma.p - 1.0)) ** (1.0 / (2.0 * sigma.p - 1.0)) - 1.0
    lo, hi = 0.0, 1.0
    while sigma_tail_integral(sigma, hi) >= target:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"{sigma.label}: tail integral stays >= 1/e out to t=1e12")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if sigma_tail_integral(sigma, mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return hi


def compute_Sigma(sigma: NoiseSpec, t: float) -> float:
    """Sigma(t) = sqrt(2 I(t) loglog(1/I(t))), defined where I(t) < 1/e."""
    I = sigma_tail_integral(sigma, t)
    if I <= 0.0:
        raise DomainError(f"{sigma.label}: degenerate noise (I(t) = 0); Sigma undefined")
    if I >= 1.0 / math.e:
        t0 = sigma_envelope_start(sigma)
        raise DomainError(
            f"{sigma.label}: Sigma undefined at t={t:.6g} (tail integral {I:.4g} >= 1/e); "
            f"defined for t > {t0:.6g}"
        )
    return math.sqrt(2.0 * I * math.log(math.log(1.0 / I)))


@dataclass(frozen=True)
class MuEstimate:
    bucket: str  # zero | positive_finite | infinite | not_applicable
    value: float
    t: np.ndarray
    values: np.ndarray
    decade_factor: float
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "bucket": self.bucket,
            "value": self.value,
            "decade_factor": self.decade_factor,
            "note": self.note,
        }


def estimate_mu(
    sigma: NoiseSpec,
    inv: InverseFlow,
    t_hi: float = 1e6,
    decades: float = 3.0,
    per_decade: int = 8,
) -> MuEstimate:
    """Trichotomy of mu = lim Sigma(t)/F^{-1}(t) over a terminal window."""
    empty = np.array([])
    if sigma.is_zero:
        return MuEstimate("not_applicable", math.nan, empty, empty, math.nan, "deterministic (sigma = 0)")
    if not sigma.in_L2:
        return MuEstimate("not_applicable", math.nan, empty, empty, math.nan, "sigma not square-integrable")
    t0 = sigma_envelope_start(sigma)
    t_lo = max(t0 * 1.001 + 1e-9, t_hi / 10.0**decades, 1.0)
    n = max(6, int(round(per_decade * math.log10(t_hi / t_lo))) + 1)
    ts = np.geomspace(t_lo, t_hi, n)
    vals = np.array([compute_Sigma(sigma, float(tv)) / inv.compute(float(tv)) for tv in ts])
    # per-decade geometric growth of the ratio decides the bucket
    top = 1.0 + ts[-1]
    decade = np.floor(np.log10(top / (1.0 + ts)) + 1e-12).astype(int)
    means = [float(np.mean(vals[decade == d])) for d in sorted(set(decade), reverse=True)]
    factors = [b / a for a, b in zip(means, means[1:]) if a > 0.0]
    gm = float(np.exp(np.mean(np.log(factors)))) if factors else 1.0
    terminal = float(vals[-1])
    if gm <= 0.5 or terminal <= 1e-9:
        return MuEstimate("zero", terminal, ts, vals, gm)
    if gm >= 2.0:
        return MuEstimate("infinite", terminal, ts, vals, gm)
    return MuEstimate("positive_finite", terminal, ts, vals, gm)


# ---------------------------------------------------------------------------
# Euler-Maruyama engine


@dataclass(frozen=True)
class Segment:
    t0: float
    t1: float
    dt: float
    steps: int


def build_segments(horizon: float, dt_max: float = 2.0**-6, n_seg: int = 512) -> list[Segment]:
    """Piecewise-uniform dyadic grid covering [0, horizon]."""
    if horizon < 1.0:
        raise ValidationError("segment grid needs horizon >= 1")
    bounds = [0.0, 1.0]
    while bounds[-1] < horizon:
        bounds.append(min(2.0 * bounds[-1], horizon))
    segs = []
    for a, b in zip(bounds, bounds[1:]):
        width = b - a
        target = min(dt_max, max(a, 1.0) / n_seg)
        m = max(1, int(math.ceil(width / target - 1e-12)))
        segs.append(Segment(t0=a, t1=b, dt=width / m, steps=m))
    return segs


def _record_times(horizon: float, per_decade: int) -> np.ndarray:
    n = max(2, int(round(per_decade * math.log10(1.0 + horizon))) + 1)
    return np.unique(np.concatenate([[0.0], np.expm1(np.linspace(0.0, math.log1p(horizon), n))]))


class _KeyedStreams:
    """One counter-based stream per path, keyed by (seed, path index)."""

    def __init__(self, seed: int, n_paths: int):
        self._gens = [
            np.random.Generator(np.random.Philox(key=(int(seed) << 64) + p)) for p in range(n_paths)
        ]

    def normals(self, n: int) -> np.ndarray:
        """(n, n_paths) standard normals; column p comes from stream p."""
        out = np.empty((n, len(self._gens)))
        for p, gen in enumerate(self._gens):
            out[:, p] = gen.standard_normal(n)
        return out


@dataclass
class PathEnsemble:
    n_paths: int
    seed: int
    horizon: float
    record_times: np.ndarray
    states: np.ndarray          # (n_records, n_paths)
    mart: np.ndarray            # running integral of sigma dB at record times
    finv: np.ndarray            # F^{-1} at record times
    terminal_states: np.ndarray
    terminal_ratios: np.ndarray
    divergent: np.ndarray       # bool mask
    segments: tuple[Segment, ...]
    refinement: tuple[int, int]
    buckets: list[str] = field(default_factory=list)


def simulate_ensemble(
    f: NonlinearitySpec,
    sigma: NoiseSpec,
    x0: float,
    horizon: float,
    n_paths: int,
    seed: int,
    inv: InverseFlow | None = None,
    dt_max: float = 2.0**-6,
    n_seg: int = 512,
    record_per_decade: int = 32,
    chunk_steps: int = 4096,
    refinement: tuple[int, int] = (1, 1),
) -> PathEnsemble:
    """Simulate n_paths of dX = -f(X) dt + sigma(t) dB with shared schedule.

    `refinement` = (substeps, finest_substeps) scales every base step into
    `substeps` equal Euler steps whose increments are sums of normals
    drawn at the `finest_substeps` resolution.  Runs with the same seed
    and the same finest resolution therefore share one Brownian path at
    every level, which is what the strong-order refinement check needs.
    Non-finite paths are flagged divergent and retained.
    """
    if horizon < 1e2:
        raise ValidationError("ensemble horizon must be >= 100")
    if n_paths < 1:
        raise ValidationError("need n_paths >= 1")
    sub, finest = refinement
    if finest % sub != 0 or sub < 1:
        raise ValidationError("finest_substeps must be a multiple of substeps")
    group = finest // sub

    segments = build_segments(horizon, dt_max=dt_max, n_seg=n_seg)
    rec_times = _record_times(horizon, record_per_decade)
    n_rec = len(rec_times)
    states = np.empty((n_rec, n_paths))
    mart = np.empty((n_rec, n_paths))

    streams = _KeyedStreams(seed, n_paths)
    X = np.full(n_paths, float(x0))
    M = np.zeros(n_paths)
    rec_idx = 0
    if rec_times[0] == 0.0:
        states[0] = X
        mart[0] = M
        rec_idx = 1

    # fast drift path for the catalog power form
    if f.kind == "power":
        beta = f.beta

        def drift(x, out):
            np.abs(x, out=out)
            np.power(out, beta, out=out)
            np.copysign(out, x, out=out)
            return out
    else:
        def drift(x, out):
            out[:] = f.eval(x)
            return out

    tmp = np.empty(n_paths)
    zero_noise = sigma.is_zero
    for seg in segments:
        m_total = seg.steps * sub  # Euler steps in this segment at this level
        dt = seg.dt / sub
        sqdt_fine = math.sqrt(seg.dt / finest)
        # record targets inside this segment, mapped to local step indices
        local_targets: dict[int, int] = {}
        while rec_idx < n_rec and rec_times[rec_idx] <= seg.t1 + 1e-9:
            j = int(round((rec_times[rec_idx] - seg.t0) / dt))
            j = min(max(j, 1), m_total)
            local_targets[j] = rec_idx
            rec_idx += 1
        done = 0
        while done < m_total:
            m = min(chunk_steps, m_total - done)
            fine = streams.normals(m * group)
            if group > 1:
                dW = fine.reshape(m, group, n_paths).sum(axis=1) * sqdt_fine
            else:
                dW = fine * sqdt_fine
            t_left = seg.t0 + (done + np.arange(m)) * dt
            sig = np.zeros(m) if zero_noise else np.asarray(sigma.sigma(t_left), dtype=float)
            for j in range(m):
                X += dt * -drift(X, tmp)
                if not zero_noise:
                    noise = sig[j] * dW[j]
                    X += noise
                    M += noise
                step_no = done + j + 1
                if step_no in local_targets:
                    k = local_targets[step_no]
                    states[k] = X
                    mart[k] = M
            done += m

    divergent = ~np.isfinite(states[-1])
    if inv is None:
        inv = InverseFlow(FlowMap(f))
    finv = np.array([inv.compute(float(t)) for t in rec_times])
    with np.errstate(invalid="ignore"):
        terminal_ratios = states[-1] / finv[-1]
    return PathEnsemble(
        n_paths=n_paths,
        seed=int(seed),
        horizon=float(horizon),
        record_times=rec_times,
        states=states,
        mart=mart,
        finv=finv,
        terminal_states=states[-1].copy(),
        terminal_ratios=terminal_ratios,
        divergent=divergent,
        segments=tuple(segments),
        refinement=(sub, finest),
    )


@dataclass(frozen=True)
class EnsembleReport:
    buckets: tuple[str, ...]
    fractions: dict[str, float]
    counts: dict[str, int]
    preserved_union_fraction: float
    terminal_trichotomy_fraction: float
    mu: MuEstimate | None
    tail_ratio_decayed_fraction: float
    lil_exceed_fraction: float
    lil_threshold: float
    lil_eval_time: float
    truncation_note: str

    def as_dict(self) -> dict:
        out = {
            "fractions": dict(sorted(self.fractions.items())),
            "counts": dict(sorted(self.counts.items())),
            "preserved_union_fraction": self.preserved_union_fraction,
            "terminal_trichotomy_fraction": self.terminal_trichotomy_fraction,
            "tail_ratio_decayed_fraction": self.tail_ratio_decayed_fraction,
            "lil_exceed_fraction": self.lil_exceed_fraction,
            "lil_threshold": self.lil_threshold,
            "lil_eval_time": self.lil_eval_time,
            "truncation_note": self.truncation_note,
        }
        if self.mu is not None:
            out["mu"] = self.mu.as_dict()
        return out


def classify_ensemble(
    ens: PathEnsemble,
    sigma: NoiseSpec | None = None,
    tol_lambda: float = 0.1,
    drift_tol: float = 0.1,
    c_bound: float = 10.0,
    lil_threshold: float = 1.5,
    inv: InverseFlow | None = None,
) -> EnsembleReport:
    """Bucket every path and check the tail-noise machinery empirically.

    Buckets: "-1", "0", "+1" (terminal-window criterion of the
    deterministic classifier; the drift gate is relaxed to 0.1/decade
    because noisy paths converge toward their lambda with visible drift),
    "unresolved" (bounded/wandering), "divergent" (non-finite).
    `preserved_union_fraction` is the mass of the three lambda buckets;
    `terminal_trichotomy_fraction` is the fraction whose terminal ratio
    alone sits within tol_lambda of some lambda.  The tail stochastic
    integral is approximated by M(T) - M(t), accepting a truncation error
    of order Sigma(T); the report carries that caveat.
    """
    t = ens.record_times
    ratios = ens.states / ens.finv[:, None]
    w1 = (1.0 + t) >= (1.0 + t[-1]) / 10.0
    buckets: list[str] = []
    for p in range(ens.n_paths):
        if ens.divergent[p] or not np.all(np.isfinite(ratios[:, p])):
            buckets.append("divergent")
            continue
        rs = series_from_arrays(t, ratios[:, p])
        v = estimate_lambda(rs, tol_lambda=tol_lambda, drift_tol=drift_tol, c_bound=c_bound)
        if v.kind == "Preserved":
            buckets.append({1: "+1", 0: "0", -1: "-1"}[v.lam])
        else:
            buckets.append("unresolved")
    counts: dict[str, int] = {}
    for b in buckets:
        counts[b] = counts.get(b, 0) + 1
    fractions = {k: v / ens.n_paths for k, v in counts.items()}
    union = sum(fractions.get(k, 0.0) for k in ("-1", "0", "+1"))
    with np.errstate(invalid="ignore"):
        term = ens.terminal_ratios
        near_any = np.zeros(ens.n_paths, dtype=bool)
        for lam in (-1.0, 0.0, 1.0):
            near_any |= np.abs(term - lam) <= tol_lambda
        near_any &= np.isfinite(term)
    trichotomy = float(np.mean(near_any))

    # tail stochastic integral (M(T) - M(t)) / F^{-1}(t) over the window
    tail = ens.mart[-1][None, :] - ens.mart[w1, :]
    tail_ratio = np.abs(tail) / ens.finv[w1, None]
    ok = np.isfinite(tail_ratio).all(axis=0)
    decayed = np.zeros(ens.n_paths, dtype=bool)
    if np.any(ok):
        first, last = tail_ratio[0, ok], tail_ratio[-1, ok]
        decayed[ok] = last <= np.maximum(0.5 * first, 1e-3)

    lil_frac = math.nan
    lil_t = float(t[w1][0])
    note = "tail integral truncated at horizon; error O(Sigma(horizon))"
    if sigma is not None and sigma.in_L2 and not sigma.is_zero:
        try:
            s_env = compute_Sigma(sigma, lil_t)
            stat = np.abs(ens.mart[-1] - ens.mart[np.argmax(w1)]) / s_env
            lil_frac = float(np.mean(stat > lil_threshold))
        except DomainError:
            note += "; Sigma undefined at window start"
    mu = None
    if sigma is not None and inv is not None:
        try:
            mu = estimate_mu(sigma, inv, t_hi=float(t[-1]))
        except DomainError:
            mu = None
    ens.buckets = buckets
    return EnsembleReport(
        buckets=tuple(buckets),
        fractions=fractions,
        counts=counts,
        preserved_union_fraction=union,
        terminal_trichotomy_fraction=trichotomy,
        mu=mu,
        tail_ratio_decayed_fraction=float(np.mean(decayed)),
        lil_exceed_fraction=lil_frac,
        lil_threshold=lil_threshold,
        lil_eval_time=lil_t,
        truncation_note=note,
    )
