"""Active-set Newton maximizer for the linearized fitting step.

Maximizes  sum_j w_j psi(t_j) + w_tail psi'(t_N+) - integral exp(psi) - q + 1
over concave piecewise-linear psi on a fixed grid, optionally extended by an
exponential right tail.  Knots where the concavity constraint binds (psi
locally linear) form the active set; Newton steps act on the values at the
free knots, which keeps the reduced Hessian tridiagonal.  The objective is
strictly concave in the knot values (and tail slope), so the maximizer is
unique.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .density import Grid, LogConcaveFit
from .kernels import J, J01, J11, J20

TAIL_SLOPE_CAP = -1e-8  # tail slopes are kept at or below this bound
_KINK_TOL = 1e-11
_DEBUG = False


class ConvergenceError(RuntimeError):
    """The inner maximizer did not reach its tolerance within the iteration cap."""


class Family(enum.Enum):
    WITH_TAIL = "with_tail"
    NO_TAIL = "no_tail"


@dataclass(frozen=True)
class WeightVector:
    """Knot weights w_1..w_N plus the tail moment weight w_{N+1}."""

    w: np.ndarray
    w_tail: float
    family: Family

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if self.w_tail < 0 or not math.isfinite(self.w_tail):
            raise ValueError("tail weight must be finite and nonnegative")
        if self.family is Family.NO_TAIL and self.w_tail != 0.0:
            raise ValueError("tail weight must vanish for the no-tail family")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class SolverReport:
    objective: float
    kkt_residual: float
    active_knots: tuple[int, ...]
    iterations: int


def _check_candidate(grid: Grid, weights: WeightVector, candidate: LogConcaveFit):
    if candidate.grid != grid:
        raise ValueError("candidate lives on a different grid")
    has_tail = candidate.tail_slope is not None
    if has_tail != (weights.family is Family.WITH_TAIL):
        raise ValueError("candidate family does not match the weight vector")


def objective(grid: Grid, weights: WeightVector, q: float, candidate: LogConcaveFit) -> float:
    """Value of the linearized augmented likelihood at the candidate."""
    _check_candidate(grid, weights, candidate)
    p = candidate.phi
    val = float(weights.w @ p - np.sum(grid.spacings * J(p[:-1], p[1:])) - q + 1.0)
    if candidate.tail_slope is not None:
        s = candidate.tail_slope
        val += weights.w_tail * s - math.exp(p[-1]) / (-s)
    return val


def gradient(grid: Grid, weights: WeightVector, q: float, candidate: LogConcaveFit) -> np.ndarray:
    """Gradient in the coordinates (psi(t_1), ..., psi(t_N)[, tail slope])."""
    _check_candidate(grid, weights, candidate)
    with_tail = candidate.tail_slope is not None
    g, gs = _full_gradient(
        grid.spacings, candidate.phi, candidate.tail_slope,
        weights.w, weights.w_tail, with_tail,
    )
    return np.concatenate([g, [gs]]) if with_tail else g


def _full_gradient(dt, p, s, w, w_tail, with_tail):
    g = w.copy()
    g[:-1] -= dt * J01(p[1:], p[:-1])
    g[1:] -= dt * J01(p[:-1], p[1:])
    gs = 0.0
    if with_tail:
        g[-1] -= math.exp(p[-1]) / (-s)
        gs = w_tail - math.exp(p[-1]) / (s * s)
    return g, gs


def _lam_value(dt, p, s, w, w_tail, q, with_tail):
    if np.max(p) > 600.0:
        return -np.inf
    val = float(w @ p - np.sum(dt * J(p[:-1], p[1:])) - q + 1.0)
    if with_tail:
        if s > TAIL_SLOPE_CAP:
            return -np.inf
        val += w_tail * s - math.exp(p[-1]) / (-s)
    return val


def _concave_hull(t, p):
    """Least concave majorant of the points (t_k, p_k); used to repair inits."""
    hull = [0]
    for k in range(1, t.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            if (p[j] - p[i]) * (t[k] - t[j]) <= (p[k] - p[j]) * (t[j] - t[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    idx = np.array(hull)
    return np.interp(t, t[idx], p[idx])


def _stretch_fractions(t, F):
    n = t.size
    K = F.size
    r = np.searchsorted(F, np.arange(n), side="right") - 1
    left = t[F[r]]
    nxt = t[F[np.minimum(r + 1, K - 1)]]
    width = np.where(nxt > left, nxt - left, 1.0)
    frac = (t - left) / width
    return r, frac


def _reduced_gradient(g, gs, r, frac, K, with_tail, tail_free, df_last):
    size = K + 1 if (with_tail and tail_free) else K
    gr = np.zeros(size)
    np.add.at(gr, r, (1.0 - frac) * g)
    np.add.at(gr, np.minimum(r + 1, K - 1), frac * g)
    if with_tail:
        if tail_free:
            gr[K] = gs
        else:
            gr[K - 1] += gs / df_last
            gr[K - 2] -= gs / df_last
    return gr


def _reduced_hessian(t, dt, p, s, F, with_tail, tail_free):
    K = F.size
    qaa = dt * J20(p[:-1], p[1:])
    qbb = dt * J20(p[1:], p[:-1])
    qab = dt * J11(p[:-1], p[1:])
    rseg = np.searchsorted(F, np.arange(t.size - 1), side="right") - 1
    fl = t[F[rseg]]
    width = t[F[rseg + 1]] - fl
    b1 = (t[:-1] - fl) / width
    b2 = (t[1:] - fl) / width
    a1 = 1.0 - b1
    a2 = 1.0 - b2
    size = K + 1 if (with_tail and tail_free) else K
    diag = np.zeros(size)
    off = np.zeros(max(size - 1, 0))
    np.add.at(diag, rseg, a1 * a1 * qaa + 2.0 * a1 * a2 * qab + a2 * a2 * qbb)
    np.add.at(off, rseg, a1 * b1 * qaa + (a1 * b2 + a2 * b1) * qab + a2 * b2 * qbb)
    np.add.at(diag, rseg + 1, b1 * b1 * qaa + 2.0 * b1 * b2 * qab + b2 * b2 * qbb)
    if with_tail:
        epn = math.exp(p[-1])
        taa = epn / (-s)
        tas = epn / (s * s)
        tss = -2.0 * epn / (s ** 3)
        if tail_free:
            diag[K - 1] += taa
            off[K - 1] += tas
            diag[K] += tss
        else:
            df = t[F[K - 1]] - t[F[K - 2]]
            diag[K - 2] += tss / (df * df)
            off[K - 2] += -(tas + tss / df) / df
            diag[K - 1] += taa + 2.0 * tas / df + tss / (df * df)
    return diag, off


def _solve_spd_banded(diag, off, rhs):
    ab = np.zeros((2, diag.size))
    ab[0, 1:] = off
    ab[1, :] = diag
    ridge = 0.0
    for _ in range(4):
        try:
            ab[1, :] = diag + ridge
            return solveh_banded(ab, rhs, lower=False)
        except np.linalg.LinAlgError:
            ridge = max(ridge * 100.0, 1e-12 * max(np.max(diag), 1.0))
    return rhs / np.maximum(diag, 1e-300)


def _cold_start(t, w, with_tail):
    span = t[-1] - t[0]
    tot = float(np.sum(w))
    mu = float(w @ t) / tot
    target = min(max((mu - t[0]) / span, 0.02), 0.98)
    lo, hi = -500.0, 500.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if J01(0.0, mid) / J(0.0, mid) < target:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi)
    beta = u / span
    body = span * J(0.0, u)
    if with_tail:
        s = min(min(beta, 0.0) - 1.0 / span, TAIL_SLOPE_CAP)
        alpha = math.log(tot / (body + math.exp(u) / (-s)))
    else:
        s = None
        alpha = math.log(tot / body)
    return alpha + beta * (t - t[0]), s


def maximize(
    grid: Grid,
    weights: WeightVector,
    q: float = 0.0,
    init: LogConcaveFit | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[LogConcaveFit, SolverReport]:
    """Maximize the linearized augmented likelihood over the concave family.

    Returns the unique maximizer together with a report carrying the final
    objective, the KKT residual (reduced gradient norm and worst
    wrong-signed multiplier), the binding knots and the iteration count.
    """
    t = grid.knots
    n = t.size
    dt = grid.spacings
    with_tail = weights.family is Family.WITH_TAIL
    w = weights.w
    w_tail = float(weights.w_tail)
    if w.size != n:
        raise ValueError("weight vector length must match the grid")
    npos = int(np.sum(w > 0))
    if npos < 2 and not (with_tail and w_tail > 0 and npos >= 1):
        raise ValueError("degenerate weights: mass concentrates at a single knot")

    # feasible starting point
    if init is not None and init.grid == grid:
        psi = init.phi.copy()
        s = init.tail_slope
    else:
        psi, s = _cold_start(t, w, with_tail)
    slopes = np.diff(psi) / dt
    if np.any(np.diff(slopes) > _KINK_TOL):
        psi = _concave_hull(t, psi)
        slopes = np.diff(psi) / dt
    if with_tail:
        cand = s if s is not None else -1.0 / (t[-1] - t[0])
        s = min(cand, slopes[-1], TAIL_SLOPE_CAP)
    else:
        s = None

    free = np.ones(n, dtype=bool)
    if n > 2:
        kink = slopes[1:] - slopes[:-1]
        free[1:-1] = kink < -_KINK_TOL
    tail_free = bool(with_tail and s < slopes[-1] - 1e-12 * (1.0 + abs(slopes[-1])))

    def lam(p_, s_):
        return _lam_value(dt, p_, s_, w, w_tail, q, with_tail)

    def interior_kinks(p_):
        sl = np.diff(p_) / dt
        return sl[1:] - sl[:-1]

    def max_step(p_, s_, F, dpsi, ds):
        """Largest feasible step along (dpsi, ds); returns (alpha, blockers)."""
        alpha = np.inf
        blockers: list[tuple] = []
        sl = np.diff(p_) / dt
        dsl = np.diff(dpsi) / dt
        if n > 2:
            kink = sl[1:] - sl[:-1]
            dkink = dsl[1:] - dsl[:-1]
            idx = np.flatnonzero(free[1:-1] & (dkink > 1e-300))
            if idx.size:
                a = -kink[idx] / dkink[idx]
                a = np.maximum(a, 0.0)
                amin = float(np.min(a))
                if amin < alpha:
                    alpha = amin
                    blockers = [("knot", int(j + 1)) for j in idx[a <= amin * (1 + 1e-9) + 1e-18]]
        if with_tail:
            if tail_free:
                dc = ds - dsl[-1]
                if dc > 1e-300:
                    a = (sl[-1] - s_) / dc
                    if a < alpha:
                        alpha, blockers = max(a, 0.0), [("attach",)]
                if ds > 1e-300:
                    a = (TAIL_SLOPE_CAP - s_) / ds
                    if a < alpha:
                        alpha, blockers = max(a, 0.0), [("cap",)]
            else:
                if dsl[-1] > 1e-300:
                    a = (TAIL_SLOPE_CAP - sl[-1]) / dsl[-1]
                    if a < alpha:
                        alpha, blockers = max(a, 0.0), [("cap",)]
        return alpha, blockers

    def best_release(p_, s_, F, g, gs):
        """Most profitable binding constraint to drop, by directional gain."""
        best = 0.0
        action = None
        K = F.size
        attached_last = with_tail and not tail_free
        for ridx in range(K - 1):
            fl, fr = int(F[ridx]), int(F[ridx + 1])
            if fr - fl < 2:
                continue
            ks = np.arange(fl + 1, fr)
            gk = g[ks]
            tk = t[ks]
            cs0 = np.cumsum(gk)
            cs1 = np.cumsum(tk * gk)
            a_part = (cs1 - t[fl] * cs0) / (tk - t[fl])
            b_part = (t[fr] * (cs0[-1] - cs0) - (cs1[-1] - cs1)) / (t[fr] - tk)
            # feasible kink direction at an active knot is a tent bump upward;
            # with the tail attached it also lowers the attached slope
            gain = a_part + b_part
            if attached_last and ridx == K - 2:
                gain = gain - gs / (t[fr] - tk)
            j = int(np.argmax(gain))
            if gain[j] > best:
                best = float(gain[j])
                action = ("knot", int(ks[j]))
        if attached_last and -gs > best:
            best = -gs
            action = ("tail",)
        return best, action

    iterations = 0
    kkt = np.inf
    stall = 0  # accepted steps with no measurable objective progress
    while iterations < max_iter:
        iterations += 1
        F = np.flatnonzero(free)
        K = F.size
        r, frac = _stretch_fractions(t, F)
        g, gs = _full_gradient(dt, psi, s, w, w_tail, with_tail)
        df_last = t[F[-1]] - t[F[-2]]
        gr = _reduced_gradient(g, gs, r, frac, K, with_tail, tail_free, df_last)
        kkt_free = float(np.max(np.abs(gr)))
        if _DEBUG:
            print(f"it={iterations} K={K} tail_free={tail_free} kkt_free={kkt_free:.3e} "
                  f"lam={_lam_value(dt, psi, s, w, w_tail, q, with_tail):.10f} s={s}")

        if kkt_free <= tol:
            gain, action = best_release(psi, s, F, g, gs)
            kkt = max(kkt_free, gain)
            if gain <= tol or action is None:
                break
            # release the constraint and step along its feasible direction:
            # bump the knot value up, or push the tail slope down
            if action[0] == "tail":
                tail_free = True
                F2, K2 = F, K
                pos = K2  # tail coordinate
                step_sign = -1.0
            else:
                free[action[1]] = True
                F2 = np.flatnonzero(free)
                K2 = F2.size
                pos = int(np.searchsorted(F2, action[1]))
                step_sign = 1.0
            diag, _ = _reduced_hessian(t, dt, psi, s, F2, with_tail, tail_free)
            curv = max(diag[pos if action[0] != "tail" else K2], 1e-300)
            size = K2 + 1 if (with_tail and tail_free) else K2
            d = np.zeros(size)
            d[pos if action[0] != "tail" else K2] = step_sign
            psi, s, ok = _line_search(
                t, dt, psi, s, F2, d, gain, lam, max_step, with_tail, tail_free,
                alpha0=min(gain / curv, 30.0),
            )
            if not ok:
                kkt = max(kkt_free, gain)
                break
            continue

        diag, off = _reduced_hessian(t, dt, psi, s, F, with_tail, tail_free)
        d = _solve_spd_banded(diag, off, gr)
        gd = float(gr @ d)
        if not np.isfinite(gd) or gd <= 0.0:
            d = gr / np.maximum(diag, 1e-300)
            gd = float(gr @ d)
        # underflowed segments make the Hessian near-singular; cap the step
        # to a sane move in log-density units so the line search can work
        dmax = float(np.max(np.abs(d)))
        if dmax > 30.0:
            d *= 30.0 / dmax
            gd *= 30.0 / dmax
        dpsi = np.interp(t, t[F], d[:K])
        ds = float(d[K]) if (with_tail and tail_free) else 0.0
        alpha_max, blockers = max_step(psi, s, F, dpsi, ds)
        if alpha_max <= 1e-14:
            for b in blockers:
                if b[0] == "knot":
                    free[b[1]] = False
                elif b[0] == "attach":
                    tail_free = False
            F = np.flatnonzero(free)
            psi = np.interp(t, t[F], psi[F])
            if with_tail and not tail_free:
                s = (psi[-1] - psi[F[-2]]) / (t[-1] - t[F[-2]])
            continue

        alpha0 = min(1.0, alpha_max)
        f0 = lam(psi, s)
        alpha = alpha0
        accepted = False
        for _ in range(64):
            psi_c = np.interp(t, t[F], psi[F] + alpha * d[:K])
            if with_tail:
                s_c = s + alpha * ds if tail_free else (psi_c[-1] - psi_c[F[-2]]) / df_last
            else:
                s_c = None
            if lam(psi_c, s_c) >= f0 + 1e-4 * alpha * gd:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            kkt = kkt_free
            break
        fc = lam(psi_c, s_c)
        stall = stall + 1 if fc - f0 <= 1e-14 * (1.0 + abs(f0)) else 0
        if stall >= 15:
            kkt = kkt_free
            break
        psi, s = psi_c, s_c
        if alpha == alpha0 and alpha_max <= 1.0:
            for b in blockers:
                if b[0] == "knot":
                    free[b[1]] = False
                elif b[0] == "attach":
                    tail_free = False
            F = np.flatnonzero(free)
            psi = np.interp(t, t[F], psi[F])
            if with_tail and not tail_free:
                s = (psi[-1] - psi[F[-2]]) / (t[-1] - t[F[-2]])
    else:
        raise ConvergenceError(f"inner solver did not converge in {max_iter} iterations")

    if not np.isfinite(kkt) or kkt > max(tol * 1e3, 1e-4):
        raise ConvergenceError(f"inner solver stalled at KKT residual {kkt:.3e}")
    fit = LogConcaveFit(grid, psi, s if with_tail else None, q)
    report = SolverReport(
        objective=lam(psi, s),
        kkt_residual=float(kkt),
        active_knots=tuple(int(k) for k in np.flatnonzero(~free)),
        iterations=iterations,
    )
    return fit, report


def _line_search(t, dt, psi, s, F, d, slope, lam, max_step, with_tail, tail_free, alpha0):
    """Backtracking step along direction d in the free coordinates."""
    K = F.size
    dpsi = np.interp(t, t[F], d[:K])
    ds = float(d[K]) if (with_tail and tail_free) else 0.0
    alpha_max, _ = max_step(psi, s, F, dpsi, ds)
    alpha = min(alpha0, alpha_max * 0.999999) if np.isfinite(alpha_max) else alpha0
    if alpha <= 0:
        return psi, s, False
    f0 = lam(psi, s)
    df_last = t[F[-1]] - t[F[-2]]
    for _ in range(64):
        psi_c = np.interp(t, t[F], psi[F] + alpha * d[:K])
        if with_tail:
            s_c = s + alpha * ds if tail_free else (psi_c[-1] - psi_c[F[-2]]) / df_last
        else:
            s_c = None
        if lam(psi_c, s_c) >= f0 + 1e-4 * alpha * slope:
            return psi_c, s_c, True
        alpha *= 0.5
    return psi, s, False
