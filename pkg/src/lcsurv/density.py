"""Piecewise log-linear sub-densities: evaluation, masses and distances.

A fit is a concave piecewise-linear log-density phi on a knot grid,
optionally extended by an exponential right tail, together with a cure
mass q at +infinity.  All probability calculus reduces to the exponential
segment kernels in :mod:`lcsurv.kernels`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .kernels import J, J_tilde


@dataclass(frozen=True)
class Grid:
    """Strictly increasing finite knots t_1 < ... < t_N, N >= 2."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 1 or k.size < 2:
            raise ValueError("grid needs at least two knots")
        if not np.all(np.isfinite(k)):
            raise ValueError("grid knots must be finite")
        if not np.all(np.diff(k) > 0):
            raise ValueError("grid knots must be strictly increasing")
        object.__setattr__(self, "knots", k)

    @property
    def n(self) -> int:
        return int(self.knots.size)

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.knots)

    def __eq__(self, other):
        return isinstance(other, Grid) and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash(self.knots.tobytes())


@dataclass(frozen=True)
class LogConcaveFit:
    """Log-density values at the knots, optional tail slope, and cure mass q.

    ``tail_slope`` present means the log-density continues linearly on
    [t_N, inf) with that (negative) slope; absent means the density is zero
    beyond t_N.  A finalized fit satisfies total_mass(fit) + q == 1.
    """

    grid: Grid
    phi: np.ndarray
    tail_slope: float | None = None
    q: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.phi, dtype=float)
        if p.shape != (self.grid.n,):
            raise ValueError("phi must hold one value per knot")
        if not np.all(np.isfinite(p)):
            raise ValueError("phi values must be finite (shrink the grid instead of storing -inf)")
        if not (0.0 <= self.q < 1.0):
            raise ValueError("q must lie in [0, 1)")
        if self.tail_slope is not None and not self.tail_slope < 0:
            raise ValueError("tail_slope must be negative")
        object.__setattr__(self, "phi", p)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.phi) / self.grid.spacings

    def is_concave(self, tol: float = 1e-9) -> bool:
        s = self.slopes
        ok = bool(np.all(np.diff(s) <= tol))
        if ok and self.tail_slope is not None:
            ok = self.tail_slope <= s[-1] + tol
        return ok

    def with_q(self, q: float) -> "LogConcaveFit":
        return replace(self, q=q)


def _segment_masses(fit: LogConcaveFit) -> np.ndarray:
    p = fit.phi
    return fit.grid.spacings * J(p[:-1], p[1:])


def _tail_mass(fit: LogConcaveFit) -> float:
    if fit.tail_slope is None:
        return 0.0
    return float(J_tilde(fit.phi[-1], fit.tail_slope))


def _cum_mass(fit: LogConcaveFit) -> np.ndarray:
    """Density mass accumulated up to each knot (cached; fits are immutable)."""
    cached = fit.__dict__.get("_cum_mass_cache")
    if cached is None:
        cached = np.concatenate(([0.0], np.cumsum(_segment_masses(fit))))
        object.__setattr__(fit, "_cum_mass_cache", cached)
    return cached


def segment_mass(fit: LogConcaveFit, j: int) -> float:
    """Mass of segment j (1-based); j = N selects the exponential tail."""
    n = fit.grid.n
    if 1 <= j <= n - 1:
        t = fit.grid.knots
        p = fit.phi
        return float((t[j] - t[j - 1]) * J(p[j - 1], p[j]))
    if j == n:
        if fit.tail_slope is None:
            raise ValueError("fit has no exponential tail")
        return _tail_mass(fit)
    raise IndexError(f"segment index {j} out of range 1..{n}")


def total_mass(fit: LogConcaveFit) -> float:
    return float(_cum_mass(fit)[-1] + _tail_mass(fit))


def log_density_at(fit: LogConcaveFit, x):
    """log f at x; -inf outside the support."""
    t = fit.grid.knots
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    inside = (x >= t[0]) & (x <= t[-1])
    out[inside] = np.interp(x[inside], t, fit.phi)
    if fit.tail_slope is not None:
        beyond = x > t[-1]
        out[beyond] = fit.phi[-1] + fit.tail_slope * (x[beyond] - t[-1])
    return out[()] if out.ndim == 0 else out


def density_at(fit: LogConcaveFit, x):
    ld = np.asarray(log_density_at(fit, x))
    out = np.exp(ld, where=np.isfinite(ld), out=np.zeros_like(ld))
    return out[()] if out.ndim == 0 else out


def cdf_at(fit: LogConcaveFit, x):
    """Distribution function of the density part (the q atom is excluded)."""
    t = fit.grid.knots
    p = fit.phi
    cum = _cum_mass(fit)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)

    k = np.searchsorted(t, x, side="right") - 1
    body = (k >= 0) & (x < t[-1])
    if np.any(body):
        kb = k[body]
        xb = x[body]
        px = np.interp(xb, t, p)
        out[body] = cum[kb] + (xb - t[kb]) * J(p[kb], px)

    past = x >= t[-1]
    if np.any(past):
        full = cum[-1]
        if fit.tail_slope is None:
            out[past] = full
        else:
            s = fit.tail_slope
            delta = x[past] - t[-1]
            out[past] = full + (math.exp(p[-1]) / (-s)) * -np.expm1(s * delta)
    return out[()] if out.ndim == 0 else out


def survival_at(fit: LogConcaveFit, x):
    """P((x, inf]) under the fit, including the cure mass q."""
    out = total_mass(fit) + fit.q - np.asarray(cdf_at(fit, x))
    return out[()] if out.ndim == 0 else out


def interval_prob(fit: LogConcaveFit, a: float, b: float) -> float:
    """P((a, b]); includes the cure mass iff b = +inf."""
    if a > b:
        raise ValueError("interval endpoints must satisfy a <= b")
    res = float(cdf_at(fit, b) - cdf_at(fit, a))
    if math.isinf(b) and b > 0:
        res += fit.q
    return res


def l1_bound(fit_a: LogConcaveFit, fit_b: LogConcaveFit) -> float:
    """Upper bound on the L1 distance of the two densities.

    Sums the segment masses of the pointwise-max and pointwise-min
    log-densities; tails contribute exp(phi_N) / |slope| with the max/min
    of the reciprocal slopes.  When exactly one fit has a tail, that fit's
    full tail mass is added.
    """
    if fit_a.grid != fit_b.grid:
        raise ValueError("l1_bound requires fits on the same grid")
    dt = fit_a.grid.spacings
    hi = np.maximum(fit_a.phi, fit_b.phi)
    lo = np.minimum(fit_a.phi, fit_b.phi)
    core = float(np.sum(dt * (J(hi[:-1], hi[1:]) - J(lo[:-1], lo[1:]))))
    sa, sb = fit_a.tail_slope, fit_b.tail_slope
    if sa is not None and sb is not None:
        inv_hi = max(1.0 / abs(sa), 1.0 / abs(sb))
        inv_lo = min(1.0 / abs(sa), 1.0 / abs(sb))
        core += math.exp(hi[-1]) * inv_hi - math.exp(lo[-1]) * inv_lo
    elif sa is not None:
        core += _tail_mass(fit_a)
    elif sb is not None:
        core += _tail_mass(fit_b)
    return core


def normalized(fit: LogConcaveFit) -> LogConcaveFit:
    """Shift (phi, q) -> (phi + c, q e^c) so that total mass plus q equals one."""
    c = -math.log(total_mass(fit) + fit.q)
    return replace(fit, phi=fit.phi + c, q=fit.q * math.exp(c))


def fit_to_dict(fit: LogConcaveFit) -> dict:
    return {
        "knots": fit.grid.knots.tolist(),
        "phi": fit.phi.tolist(),
        "tail_slope": fit.tail_slope,
        "q": fit.q,
    }


def fit_from_dict(obj: dict) -> LogConcaveFit:
    return LogConcaveFit(
        grid=Grid(np.asarray(obj["knots"], dtype=float)),
        phi=np.asarray(obj["phi"], dtype=float),
        tail_slope=obj.get("tail_slope"),
        q=float(obj.get("q", 0.0)),
    )


def save_fit(fit: LogConcaveFit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit), fh, indent=2)
        fh.write("\n")


def load_fit(path) -> LogConcaveFit:
    with open(path, "r", encoding="utf-8") as fh:
        return fit_from_dict(json.load(fh))
