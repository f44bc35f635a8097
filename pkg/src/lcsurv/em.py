"""EM outer loop: E-step weights, cure-mass update, domain reductions.

Each iteration linearizes the censored-data log-likelihood around the
current fit (the E-step measure), maximizes the linearization with the
active-set solver, and re-optimizes the cure mass q.  The augmented
objective never decreases.  Near convergence, first-order tests may
certify that the tail or a boundary knot carries no mass at the optimum,
in which case the domain is reduced and the fit recomputed.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .data import (
    Dataset,
    DegenerateKind,
    DegenerateSolution,
    GridPolicy,
    NoMleError,
    Observation,
    build_estimation_grid,
    check_existence,
    classify_degenerate,
    compute_tau_grid,
)
from .density import (
    Grid,
    LogConcaveFit,
    _cum_mass,
    _tail_mass,
    cdf_at,
    l1_bound,
    log_density_at,
    normalized,
    total_mass,
)
from .kernels import J01
from .solver import Family, WeightVector, maximize


@dataclass(frozen=True)
class EmConfig:
    allow_cure: bool = False
    l1_tol: float = 1e-6
    max_iter: int = 2500
    eps1: float = 0.0
    eps2: float = 0.0
    domain_reduction: bool = True
    grid_policy: GridPolicy = field(default_factory=GridPolicy)
    inner_tol: float = 1e-8

    def __post_init__(self):
        if self.l1_tol <= 0:
            raise ValueError("l1_tol must be positive")
        if not (0 <= self.eps1 <= 1e-3 and 0 <= self.eps2 <= 1e-3):
            raise ValueError("pseudo-observation weights must lie in [0, 1e-3]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


class TraceRecord(NamedTuple):
    iteration: int
    lam: float
    l1: float
    n_knots: int
    q: float


@dataclass(frozen=True)
class EmState:
    fit: LogConcaveFit
    lam: float
    iterations: int
    last_l1: float
    reductions: tuple[str, ...] = ()
    converged: bool = False
    trace: tuple[TraceRecord, ...] = ()


def _grid_indices(fit: LogConcaveFit, d: Dataset):
    """Knot indices of the observation endpoints.

    Censored endpoints outside the current domain are clipped to its
    boundary (the density part of such intervals is partly or fully gone,
    which is exactly what domain reduction asserts); endpoints inside the
    domain, and all exact observations, must sit on grid knots.
    """
    t = fit.grid.knots
    lefts = d.lefts()
    rights = d.rights()
    exact = lefts == rights
    rc = np.isinf(rights)

    lc = np.clip(lefts, t[0], t[-1])
    i_left = np.searchsorted(t, lc)
    ok = t[np.minimum(i_left, t.size - 1)] == lc
    if not np.all(ok & (~exact | (lc == lefts))):
        raise ValueError("observation left endpoints must lie on the fit grid")
    i_right = np.full(d.n, t.size - 1)
    fin = ~rc
    rcl = np.clip(rights[fin], t[0], t[-1])
    i_right[fin] = np.searchsorted(t, rcl)
    if not np.all(t[np.minimum(i_right[fin], t.size - 1)] == rcl):
        raise ValueError("observation right endpoints must lie on the fit grid")
    return i_left, i_right, exact, rc


def e_step(fit: LogConcaveFit, d: Dataset) -> WeightVector:
    """Hat-function integrals of the conditional-density mixture.

    Each censored observation contributes its conditional density under
    the current fit, each exact observation a point mass; the result is
    the weight vector that the inner solver consumes.
    """
    t = fit.grid.knots
    n_knots = t.size
    p = fit.phi
    dt = fit.grid.spacings
    i_left, i_right, exact, rc = _grid_indices(fit, d)
    wts = d.effective_weights()
    cum = _cum_mass(fit)
    tail = _tail_mass(fit)
    with_tail = fit.tail_slope is not None

    cens = ~exact
    seg_end = np.where(rc, n_knots - 1, i_right)
    denom = np.where(rc, cum[-1] - cum[i_left] + tail + fit.q, cum[seg_end] - cum[i_left])
    if np.any(cens & (denom <= 0)):
        bad = int(np.flatnonzero(cens & (denom <= 0))[0])
        raise ValueError(f"observation {bad} has zero probability under the fit")

    c = np.where(cens, wts / np.where(denom > 0, denom, 1.0), 0.0)
    spread = np.zeros(n_knots)
    np.add.at(spread, i_left[cens], c[cens])
    np.add.at(spread, seg_end[cens], -c[cens])
    cover = np.cumsum(spread)[: n_knots - 1]

    w = np.zeros(n_knots)
    w[:-1] += cover * dt * J01(p[1:], p[:-1])
    w[1:] += cover * dt * J01(p[:-1], p[1:])
    np.add.at(w, i_left[exact], wts[exact])

    w_tail = 0.0
    if with_tail:
        c_tail = float(np.sum(c[rc & cens]))
        w[-1] += c_tail * tail
        w_tail = c_tail * math.exp(p[-1]) / fit.tail_slope ** 2
    return WeightVector(w, w_tail, Family.WITH_TAIL if with_tail else Family.NO_TAIL)


def loglik(fit: LogConcaveFit, d: Dataset) -> float:
    """Weighted censored-data log-likelihood; -inf under zero-probability data."""
    wts = d.effective_weights()
    lefts = d.lefts()
    rights = d.rights()
    exact = lefts == rights
    total = 0.0
    if np.any(exact):
        ld = np.asarray(log_density_at(fit, lefts[exact]))
        if np.any(np.isneginf(ld)):
            return -math.inf
        total += float(wts[exact] @ ld)
    cens = ~exact
    if np.any(cens):
        rc = np.isinf(rights[cens])
        hi = np.where(rc, 0.0, rights[cens])
        pr = np.asarray(cdf_at(fit, hi)) - np.asarray(cdf_at(fit, lefts[cens]))
        pr[rc] = total_mass(fit) - np.asarray(cdf_at(fit, lefts[cens]))[rc] + fit.q
        if np.any(pr <= 0):
            return -math.inf
        total += float(wts[cens] @ np.log(pr))
    return total


def augmented_loglik(fit: LogConcaveFit, d: Dataset) -> float:
    """The normalization-free objective: loglik - total mass - q + 1."""
    return loglik(fit, d) - total_mass(fit) - fit.q + 1.0


def update_q(fit: LogConcaveFit, d: Dataset) -> float:
    """Optimal cure mass for a fixed density part.

    Returns 0 when no observation is right-censored or the first-order
    condition already holds at q = 0; otherwise the unique root of the
    stationarity equation on (0, q_bar], located by bisection.
    """
    wts = d.effective_weights()
    rc = np.array([o.is_right_censored for o in d.observations])
    if not np.any(rc):
        return 0.0
    q_bar = float(np.sum(wts[rc]))
    mass_above = total_mass(fit) - np.asarray(cdf_at(fit, d.lefts()[rc]))
    mass_above = np.maximum(mass_above, 0.0)
    w_rc = wts[rc]

    def g(q):
        return float(np.sum(w_rc / (mass_above + q)))

    if np.all(mass_above > 0) and g(0.0) <= 1.0:
        return 0.0
    # g is convex decreasing, so Newton from the right bracket end converges
    # monotonically; the bracket guards against numerical slips
    lo, hi = 0.0, q_bar
    q = q_bar
    for _ in range(100):
        val = g(q) - 1.0
        if val > 0:
            lo = q
        else:
            hi = q
        if abs(val) < 1e-13 or hi - lo <= 1e-16:
            break
        dg = -float(np.sum(w_rc / (mass_above + q) ** 2))
        step = q - val / dg
        q = step if lo < step < hi else 0.5 * (lo + hi)
    return q


def apply_pseudo_observations(d: Dataset, cfg: EmConfig, family: Family) -> Dataset:
    """Add tiny artificial observations pinning down the boundary knots.

    {tau_1} with weight eps1 unless an exact observation already sits
    there; for the tailed family (tau_m, inf] with weight eps2 unless
    present, for the bounded family {tau_m} with weight eps2 unless an
    exact observation sits there.
    """
    if cfg.eps1 == 0.0 and cfg.eps2 == 0.0:
        return d
    tg = compute_tau_grid(d)
    tau1, taum = tg.taus[0], tg.taus[-1]
    obs = list(d.observations)
    n = d.n
    base = d.effective_weights() * n

    e1 = cfg.eps1
    if any(o.is_exact and o.left == tau1 for o in obs):
        e1 = 0.0
    e2 = cfg.eps2
    if family is Family.WITH_TAIL:
        if any((not o.is_exact) and o.left == taum and o.is_right_censored for o in obs):
            e2 = 0.0
    else:
        if any(o.is_exact and o.left == taum for o in obs):
            e2 = 0.0
    if e1 == 0.0 and e2 == 0.0:
        return d

    extra_obs = []
    extra_w = []
    if e1 > 0:
        extra_obs.append(Observation(tau1, tau1))
        extra_w.append(e1)
    if e2 > 0:
        extra_obs.append(Observation(taum, math.inf) if family is Family.WITH_TAIL else Observation(taum, taum))
        extra_w.append(e2)
    denom = n + e1 + e2
    weights = tuple(np.concatenate([base / denom, np.asarray(extra_w) / denom]))
    return Dataset(tuple(obs) + tuple(extra_obs), weights)


def em_iterate(state: EmState, d: Dataset, cfg: EmConfig) -> EmState:
    """One E-step + M-step (+ cure update); the augmented objective never drops."""
    fit = state.fit
    wv = e_step(fit, d)
    new_fit, _report = maximize(fit.grid, wv, q=fit.q, init=fit, tol=cfg.inner_tol)
    q_new = update_q(new_fit, d) if cfg.allow_cure else 0.0
    new_fit = new_fit.with_q(q_new)
    lam = augmented_loglik(new_fit, d)
    l1 = l1_bound(fit, new_fit)
    rec = TraceRecord(state.iterations + 1, lam, l1, new_fit.grid.n, q_new)
    return replace(
        state,
        fit=new_fit,
        lam=lam,
        iterations=state.iterations + 1,
        last_l1=l1,
        trace=state.trace + (rec,),
    )


def _reduction_candidate(state: EmState, d: Dataset) -> tuple[str, LogConcaveFit] | None:
    """First domain-reduction rule whose first-order test certifies a drop."""
    fit = state.fit
    t = fit.grid.knots
    n_knots = t.size
    wts = d.effective_weights()
    lefts = d.lefts()
    rights = d.rights()
    exact = lefts == rights
    rc = np.isinf(rights)
    q = fit.q

    if fit.tail_slope is not None:
        # drop the exponential tail when even a vanishing tail cannot help
        fire = True
        if np.any(rc):
            denom = np.asarray(cdf_at(fit, t[-2])) - np.asarray(cdf_at(fit, lefts[rc]))
            fire = bool(np.all(denom > 0)) and float(np.sum(wts[rc] / denom)) <= 1.0
        if fire:
            return "tail", replace(fit, tail_slope=None)
        return None

    if n_knots >= 3 and not np.any(exact & (lefts == t[-1])):
        # observations whose interval still reaches the last knot; an empty
        # selection means the knot carries no likelihood at all
        sel = (~exact) & (lefts < t[-1]) & (rights >= t[-1])
        fire = True
        if np.any(sel):
            pi = np.asarray(cdf_at(fit, t[-2])) - np.asarray(cdf_at(fit, np.maximum(lefts[sel], t[0])))
            pi = np.maximum(pi, 0.0) + q * rc[sel]
            fire = bool(np.all(pi > 0)) and float(np.sum(wts[sel] / pi)) <= 1.0
        if fire:
            return "knot-right", LogConcaveFit(Grid(t[:-1]), fit.phi[:-1], None, q)

    if n_knots >= 3 and not np.any(exact & (lefts == t[0])):
        sel = (~exact) & (lefts <= t[0])
        fire = True
        if np.any(sel):
            hi = np.clip(rights[sel], t[0], t[-1])
            pi = np.asarray(cdf_at(fit, hi)) - float(cdf_at(fit, t[1]))
            pi = np.maximum(pi, 0.0) + q * rc[sel]
            fire = bool(np.all(pi > 0)) and float(np.sum(wts[sel] / pi)) <= 1.0
        if fire:
            return "knot-left", LogConcaveFit(Grid(t[1:]), fit.phi[1:], None, q)
    return None


def try_domain_reductions(state: EmState, d: Dataset, cfg: EmConfig) -> EmState:
    """Apply every reduction rule that fires, re-running the M-step each time.

    Dropping certified tails/knots is exact: the restricted fit is the
    limit of pushing the dropped coordinate to -inf, which the first-order
    test shows can only raise the objective.
    """
    while True:
        cand = _reduction_candidate(state, d)
        if cand is None:
            return state
        name, restricted = cand
        state = replace(state, fit=restricted, reductions=state.reductions + (name,))
        state = em_iterate(state, d, cfg)


def _linear_start(grid: Grid, target_mean: float, mass: float, with_tail: bool):
    """Linear log-density on the grid with the requested mean and total mass."""
    from .kernels import J as _J, J01 as _J01

    t = grid.knots
    span = t[-1] - t[0]
    frac = min(max((target_mean - t[0]) / span, 0.02), 0.98)
    lo, hi = -500.0, 500.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _J01(0.0, mid) / _J(0.0, mid) < frac:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi)
    beta = u / span
    body = span * _J(0.0, u)
    s = None
    if with_tail:
        s = min(min(beta, 0.0) - 1.0 / span, -1e-8)
        body += math.exp(u) / (-s)
    alpha = math.log(mass / body)
    return alpha + beta * (t - t[0]), s


def _initial_fit(grid: Grid, d: Dataset, family: Family, allow_cure: bool) -> LogConcaveFit:
    wts = d.effective_weights()
    lefts = d.lefts()
    rights = d.rights()
    rc = np.isinf(rights)
    q_bar = float(np.sum(wts[rc]))
    q0 = q_bar / 2.0 if (allow_cure and q_bar > 0) else 0.0
    mids = np.where(rc, lefts, 0.5 * (lefts + rights))
    mu = float(wts @ mids)
    phi, s = _linear_start(grid, mu, 1.0 - q0, family is Family.WITH_TAIL)
    return LogConcaveFit(grid, phi, s, q0)


def _degenerate_fit(sol: DegenerateSolution, d: Dataset) -> LogConcaveFit:
    """Canonical maximizer for the closed-form corner cases."""
    if sol.kind is DegenerateKind.INTERVAL_MASS:
        lo, hi = sol.support
        if math.isinf(hi):
            return LogConcaveFit(Grid(np.array([lo, lo + 1.0])), np.array([0.0, -1.0]), -1.0, 0.0)
        return LogConcaveFit(
            Grid(np.array([lo, hi])), np.full(2, -math.log(hi - lo)), None, 0.0
        )
    if sol.kind is DegenerateKind.TWO_PIECE_LINEAR:
        a, mu, b = sol.support
        p_left = sol.masses[0]
        if math.isinf(b):
            beta = math.log1p(-p_left) / (mu - a)
            alpha = math.log(-beta)
            phi = alpha + beta * (np.array([a, mu]) - a)
            return LogConcaveFit(Grid(np.array([a, mu])), phi, beta, 0.0)
        lo_b, hi_b = -500.0 / (b - a), 500.0 / (b - a)
        for _ in range(200):
            beta = 0.5 * (lo_b + hi_b)
            num = math.expm1(beta * (mu - a)) if beta != 0 else (mu - a)
            den = math.expm1(beta * (b - a)) if beta != 0 else (b - a)
            if num / den > p_left:
                lo_b = beta
            else:
                hi_b = beta
        beta = 0.5 * (lo_b + hi_b)
        grid = Grid(np.array([a, mu, b]))
        phi = beta * (grid.knots - a)
        fit = LogConcaveFit(grid, phi, None, 0.0)
        return normalized(fit)
    raise NoMleError(sol.support[0], sol.description)


def estimate(
    d: Dataset, cfg: EmConfig = EmConfig(), verbose: bool = False
) -> tuple[LogConcaveFit, EmState]:
    """Maximum-likelihood fit of the censored dataset.

    Raises :class:`NoMleError` when the likelihood is unbounded.  The
    closed-form corner cases bypass the EM loop.  Otherwise iterates
    E/M/q steps until the L1 bound between successive densities falls
    below ``cfg.l1_tol``, applying domain reductions near convergence
    when enabled; a non-converged state is returned with its diagnostics
    rather than raised.
    """
    res = check_existence(d, cfg.allow_cure)
    if not res.exists:
        raise NoMleError(res.witness, f"no MLE: exact observation {res.witness} lies in every interval")
    sol = classify_degenerate(d)
    if sol is not None:
        fit = _degenerate_fit(sol, d)
        lam = augmented_loglik(fit, d)
        state = EmState(
            fit=fit,
            lam=lam,
            iterations=0,
            last_l1=0.0,
            converged=True,
            trace=(TraceRecord(0, lam, 0.0, fit.grid.n, fit.q),),
        )
        return fit, state

    tg = compute_tau_grid(d)
    family = Family.WITH_TAIL if (not cfg.allow_cure and tg.has_infinite_right) else Family.NO_TAIL
    d_work = apply_pseudo_observations(d, cfg, family)
    grid = build_estimation_grid(tg, d_work, cfg.grid_policy)
    fit = _initial_fit(grid, d_work, family, cfg.allow_cure)
    lam0 = augmented_loglik(fit, d_work)
    state = EmState(
        fit=fit,
        lam=lam0,
        iterations=0,
        last_l1=math.inf,
        trace=(TraceRecord(0, lam0, math.inf, grid.n, fit.q),),
    )

    reduction_trigger = 100.0 * cfg.l1_tol
    last_reduction_check = -10
    while state.iterations < cfg.max_iter:
        state = em_iterate(state, d_work, cfg)
        if verbose:
            rec = state.trace[-1]
            print(
                f"iter={rec.iteration} lambda={rec.lam:.10g} l1={rec.l1:.3e} "
                f"knots={rec.n_knots} q={rec.q:.6g}",
                file=sys.stderr,
            )
        near_stop = state.last_l1 < cfg.l1_tol
        if cfg.domain_reduction and state.last_l1 < reduction_trigger:
            # the first-order tests are not free, so between the trigger and
            # actual convergence re-check only periodically
            if near_stop or state.iterations - last_reduction_check >= 10:
                last_reduction_check = state.iterations
                reduced = try_domain_reductions(state, d_work, cfg)
                if len(reduced.reductions) > len(state.reductions):
                    state = reduced
                    continue
        if near_stop:
            state = replace(state, converged=True)
            break

    final = normalized(state.fit)
    state = replace(state, fit=final, lam=augmented_loglik(final, d_work))
    return final, state
