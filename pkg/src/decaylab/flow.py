"""The decay transform F(x) = integral_x^1 du/f(u) and its inverse.

F is strictly decreasing with F(1) = 0 and F(x) -> infinity as x -> 0+,
and t -> F^{-1}(t) is the canonical decay yardstick: the unperturbed flow
x' = -f(x) started at zeta follows F^{-1}(t + F(zeta)) exactly.

F is computed by adaptive quadrature over a geometric panel cache
(x_k = 2^{-k} down from 1): each panel integral is well conditioned even
when 1/f spans hundreds of orders of magnitude over the full range.  The
cache extends downward on demand and stops at the domain floor where the
integrand overflows (e.g. f = exp(-1/x) underflows near x ~ 1.4e-3); any
request below the floor raises a DomainError naming the smallest
supported x.  The inverse is a bracketed bisection on the monotone cache,
terminating on the residual |F(x) - t|, with automatic downward bracket
extension for large t.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, IntegrationError, ValidationError
from .nonlinearity import NonlinearitySpec

__all__ = [
    "FlowMap",
    "InverseFlow",
    "compute_F",
    "compute_F_inverse",
    "inverse_ratio",
    "verify_phi_F_bounds",
    "PhiFBoundsReport",
    "dump_flow",
]

_HARD_FLOOR = 1e-300


class FlowMap:
    """Cached transform F for a validated nonlinearity.

    Queries inside the cached domain are pure; downward cache extension is
    the only mutation and runs under a single-writer lock.
    """

    def __init__(
        self,
        f: NonlinearitySpec,
        abs_tol: float = 1e-10,
        rel_tol: float = 1e-10,
        ratio: float = 0.5,
    ):
        if f.domain[1] < 1.0:
            raise ValidationError(
                f"{f.label}: flow transform is anchored at 1 but f is only defined up to {f.domain[1]:g}"
            )
        if abs_tol <= 0.0 or rel_tol <= 0.0:
            raise ValidationError("quadrature tolerances must be positive")
        self.f = f
        self.abs_tol = float(abs_tol)
        self.rel_tol = float(rel_tol)
        self.ratio = float(ratio)
        self._xs: list[float] = [1.0]
        self._Fs: list[float] = [0.0]
        self._floor_hit = False
        self._lock = threading.Lock()

    # -- cache internals ---------------------------------------------------

    _MAX_LOG_RANGE = 25.0  # dynamic range of 1/f allowed per quadrature call

    def _split(self, a: float, b: float) -> list[tuple[float, float]]:
        """Bisect [a, b] until log(1/f) varies by <= _MAX_LOG_RANGE per piece."""
        logf = self.f.log_eval_pos
        if logf is None:
            return [(a, b)]
        out: list[tuple[float, float]] = []
        stack = [(a, b)]
        while stack:
            lo, hi = stack.pop()
            span = abs(float(logf(np.asarray(hi))) - float(logf(np.asarray(lo))))
            if span <= self._MAX_LOG_RANGE or hi - lo <= 1e-14 * hi:
                out.append((lo, hi))
            else:
                mid = math.sqrt(lo * hi)
                stack.append((mid, hi))
                stack.append((lo, mid))
        return sorted(out)

    def _panel(self, a: float, b: float) -> float:
        total = 0.0
        for lo, hi in self._split(a, b):
            val, err = quad(
                lambda u: 1.0 / self.f.eval_pos(np.asarray(u)),
                lo,
                hi,
                epsabs=self.abs_tol,
                epsrel=self.rel_tol,
                limit=200,
            )
            if not np.isfinite(val) or val < 0.0 or err > max(self.abs_tol, 1e-8 * abs(val)):
                raise IntegrationError(
                    f"{self.f.label}: quadrature failed on [{lo:.6g}, {hi:.6g}] "
                    f"(value {val:.3g}, error estimate {err:.3g})"
                )
            total += float(val)
        return total

    def _try_extend_one(self) -> bool:
        """Append one rung below the cache; False once the floor is hit."""
        with self._lock:
            if self._floor_hit:
                return False
            nx = self._xs[-1] * self.ratio
            if nx < max(_HARD_FLOOR, self.f.domain[0]):
                self._floor_hit = True
                return False
            with np.errstate(over="ignore", divide="ignore"):
                fv = float(self.f.eval_pos(np.asarray(nx)))
            if not np.isfinite(fv) or fv <= 0.0 or not np.isfinite(1.0 / fv):
                self._floor_hit = True
                return False
            try:
                with np.errstate(over="ignore"):
                    panel = self._panel(nx, self._xs[-1])
            except IntegrationError:
                self._floor_hit = True
                return False
            nf = self._Fs[-1] + panel
            if not (np.isfinite(panel) and np.isfinite(nf)):
                self._floor_hit = True
                return False
            self._xs.append(nx)
            self._Fs.append(nf)
            return True

    def _extend_down_to(self, x: float) -> None:
        while self._xs[-1] > x:
            if not self._try_extend_one():
                raise DomainError(
                    f"{self.f.label}: F not computable below x={self._xs[-1]:.6g} "
                    f"(requested x={x:.6g})"
                )

    # -- public surface ----------------------------------------------------

    @property
    def domain_floor(self) -> float:
        return self._xs[-1]

    @property
    def max_cached_F(self) -> float:
        return self._Fs[-1]

    def cache_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._xs), np.array(self._Fs)

    def compute_F(self, x: float) -> float:
        """F(x) for x in (floor, 1]; F(1) = 0 exactly."""
        x = float(x)
        if x == 1.0:
            return 0.0
        if not (0.0 < x <= 1.0):
            raise DomainError(f"F is defined on (0, 1]; got x={x:.6g}")
        if x < self._xs[-1]:
            try:
                self._extend_down_to(x)
            except DomainError:
                # the cache cannot halve further, but a longer panel down to x
                # may still be integrable (the split keeps it well conditioned)
                with np.errstate(over="ignore", divide="ignore"):
                    fv = float(self.f.eval_pos(np.asarray(x)))
                if not np.isfinite(fv) or fv <= 0.0 or not np.isfinite(1.0 / fv):
                    raise
        xs = self._xs
        # anchor at the deepest cached node >= x: F(x) = F(node) + panel(x, node)
        # is a sum of nonnegative terms, so no cancellation for steep f
        lo_idx, hi_idx = 0, len(xs) - 1
        while lo_idx < hi_idx:
            mid = (lo_idx + hi_idx) // 2
            if xs[mid] < x:
                hi_idx = mid
            else:
                lo_idx = mid + 1
        idx = lo_idx if xs[lo_idx] >= x else lo_idx - 1
        if xs[idx] == x:
            return self._Fs[idx]
        val = self._Fs[idx] + self._panel(x, xs[idx])
        if not np.isfinite(val):
            raise DomainError(f"{self.f.label}: F overflows at x={x:.6g}")
        return val

    def largest_supported_t(self) -> float:
        """Extend to the floor and report the largest invertible t."""
        while self._try_extend_one():
            pass
        return self._Fs[-1]


def compute_F(fm: FlowMap, x: float) -> float:
    return fm.compute_F(x)


class InverseFlow:
    """Monotone inverse of a FlowMap: F^{-1}(t) with F(F^{-1}(t)) = t."""

    def __init__(self, flow: FlowMap, root_tol: float = 1e-9, max_iter: int = 240):
        if root_tol <= 0.0:
            raise ValidationError("root tolerance must be positive")
        self.flow = flow
        self.root_tol = float(root_tol)
        self.max_iter = int(max_iter)

    def compute(self, t: float) -> float:
        t = float(t)
        if t < 0.0:
            raise DomainError(f"inverse flow is defined for t >= 0; got {t:.6g}")
        if t == 0.0:
            return 1.0
        # halve the bracket floor until F exceeds t (cache extension)
        while self.flow._Fs[-1] < t:
            if not self.flow._try_extend_one():
                raise DomainError(
                    f"{self.flow.f.label}: t={t:.6g} beyond computable range; "
                    f"largest supported t is {self.flow._Fs[-1]:.6g} "
                    f"(domain floor x={self.flow.domain_floor:.6g})"
                )
        Fs = self.flow._Fs
        xs = self.flow._xs
        idx = int(np.searchsorted(np.asarray(Fs), t))
        if Fs[idx] == t:
            return xs[idx]
        lo_x, hi_x = xs[idx], xs[idx - 1]  # F(lo_x) >= t >= F(hi_x)
        best_x, best_res = lo_x, abs(Fs[idx] - t)
        for _ in range(self.max_iter):
            # sqrt(lo)*sqrt(hi) avoids underflow of the product near 1e-300
            mid = math.sqrt(lo_x) * math.sqrt(hi_x)
            fm = self.flow.compute_F(mid)
            res = abs(fm - t)
            if res < best_res:
                best_x, best_res = mid, res
            if res <= self.root_tol:
                return mid
            if fm > t:
                lo_x = mid
            else:
                hi_x = mid
            if hi_x - lo_x <= np.finfo(float).eps * hi_x:
                break
        # |F'| = 1/f can be so large that one ulp of x moves F by more than
        # root_tol; the best representable x is then the honest answer
        with np.errstate(over="ignore", divide="ignore"):
            quantum = float(np.spacing(best_x) / self.flow.f.eval_pos(np.asarray(best_x)))
        if best_res <= self.root_tol + 2.0 * quantum:
            return best_x
        raise IntegrationError(
            f"inverse iteration stalled at residual {best_res:.3g} (tol {self.root_tol:.3g}) for t={t:.6g}"
        )

    def __call__(self, t):
        if np.isscalar(t) or np.asarray(t).ndim == 0:
            return self.compute(float(t))
        return np.array([self.compute(float(v)) for v in np.asarray(t, dtype=float)])


def compute_F_inverse(inv: InverseFlow, t: float) -> float:
    return inv.compute(t)


def inverse_ratio(inv: InverseFlow, eps: float, ts: np.ndarray) -> np.ndarray:
    """Samples of F^{-1}((1+eps) t) / F^{-1}(t)."""
    ts = np.asarray(ts, dtype=float)
    return inv(ts * (1.0 + eps)) / inv(ts)


@dataclass(frozen=True)
class PhiFBoundsRecord:
    eps: float
    ratio_liminf: float
    ratio_limsup: float
    one_minus_liminf: float
    one_minus_limsup: float
    liminf_bounds: tuple[float, float]
    limsup_bounds: tuple[float, float]
    liminf_within: bool
    limsup_within: bool
    slack_lower: float
    slack_upper: float


@dataclass(frozen=True)
class PhiFBoundsReport:
    records: tuple[PhiFBoundsRecord, ...]
    psi_eps: tuple[float, ...]
    psi_liminf: tuple[float, ...]
    psi_approaches_one: bool
    all_within: bool


def verify_phi_F_bounds(
    inv: InverseFlow,
    l: float,
    L: float,
    eps_ladder: Sequence[float] = (0.1, 0.5),
    t_window: tuple[float, float] = (1e2, 1e6),
    per_decade: int = 16,
    slack_tol: float = 1e-3,
    psi_ladder: Sequence[float] = (0.5, 0.1, 0.01),
) -> PhiFBoundsReport:
    """Check the double inequalities linking the F^{-1} shrink ratio to l, L.

    For each eps, the terminal-window liminf of F^{-1}((1+eps)t)/F^{-1}(t)
    must satisfy  eps*L/(1 + eps*(1+L)) <= 1 - liminf <= eps*L, and the
    limsup analogue the same bounds with l.  Also reports the companion
    small-x check that the liminf of F((1+eps)x)/F(x) approaches 1 as
    eps -> 0 (kept as a separate field from the F^{-1} ratios).
    """
    t_lo, t_hi = t_window
    n = max(8, int(round(per_decade * math.log10(t_hi / t_lo))) + 1)
    ts = np.geomspace(t_lo, t_hi, n)
    records = []
    for eps in eps_ladder:
        r = inverse_ratio(inv, eps, ts)
        wmask = ts >= t_hi / 10.0
        window = r[wmask]
        r_lo, r_hi = float(np.min(window)), float(np.max(window))
        one_minus_lo = 1.0 - r_lo
        one_minus_hi = 1.0 - r_hi
        b_lo = (eps * L / (1.0 + eps * (1.0 + L)), eps * L)
        b_hi = (eps * l / (1.0 + eps * (1.0 + l)), eps * l)
        ok_lo = b_lo[0] - slack_tol <= one_minus_lo <= b_lo[1] + slack_tol
        ok_hi = b_hi[0] - slack_tol <= one_minus_hi <= b_hi[1] + slack_tol
        records.append(
            PhiFBoundsRecord(
                eps=eps,
                ratio_liminf=r_lo,
                ratio_limsup=r_hi,
                one_minus_liminf=one_minus_lo,
                one_minus_limsup=one_minus_hi,
                liminf_bounds=b_lo,
                limsup_bounds=b_hi,
                liminf_within=bool(ok_lo),
                limsup_within=bool(ok_hi),
                slack_lower=one_minus_lo - b_lo[0],
                slack_upper=b_lo[1] - one_minus_lo,
            )
        )

    # companion check near x = 0: liminf F((1+eps)x)/F(x) -> 1 as eps -> 0
    flow = inv.flow
    floor = max(flow.domain_floor, 1e-8)
    x_hi = min(1e-2, math.sqrt(floor) if floor > 1e-4 else 1e-2)
    x_lo = max(floor * 2.0, x_hi / 10.0)
    xs = np.geomspace(x_hi, x_lo, 17)
    psi_vals = []
    for eps in psi_ladder:
        ratios = np.array(
            [flow.compute_F((1.0 + eps) * x) / flow.compute_F(x) for x in xs if (1.0 + eps) * x <= 1.0]
        )
        psi_vals.append(float(np.min(ratios)))
    approaches = all(b >= a - 1e-12 for a, b in zip(psi_vals, psi_vals[1:]))
    approaches = approaches and psi_vals[-1] >= 1.0 - 2.0 * min(psi_ladder)
    return PhiFBoundsReport(
        records=tuple(records),
        psi_eps=tuple(float(e) for e in psi_ladder),
        psi_liminf=tuple(psi_vals),
        psi_approaches_one=bool(approaches),
        all_within=all(r.liminf_within and r.limsup_within for r in records),
    )


def dump_flow(inv: InverseFlow, t_max: float, points: int) -> list[tuple[float, float]]:
    """Log-spaced (t, F^{-1}(t)) table starting at t = 0."""
    if t_max <= 0.0 or points < 2:
        raise DomainError("dump needs t_max > 0 and points >= 2")
    ts = np.concatenate([[0.0], np.geomspace(max(1e-3, t_max * 1e-9), t_max, points - 1)])
    return [(float(t), inv.compute(float(t))) for t in ts]
