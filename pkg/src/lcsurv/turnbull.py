"""Unconstrained NPMLE baselines: Turnbull self-consistency estimator.

For right-censored data the estimator reduces to Kaplan-Meier, for exact
data to the empirical distribution.  Mass can only sit on the maximal
intersections (innermost intervals) of the observation sets; within each
innermost interval the likelihood does not identify the placement, so by
convention all of its mass goes to the right endpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .density import LogConcaveFit, survival_at


@dataclass(frozen=True)
class StepSurvival:
    """Right-continuous step survival function with an optional atom at +inf."""

    jump_points: np.ndarray
    masses: np.ndarray
    mass_at_infinity: float

    def __post_init__(self):
        jp = np.asarray(self.jump_points, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        if jp.shape != m.shape or jp.ndim != 1:
            raise ValueError("jump points and masses must be aligned 1-d arrays")
        if jp.size > 1 and not np.all(np.diff(jp) > 0):
            raise ValueError("jump points must be strictly increasing")
        if np.any(m < -1e-12) or self.mass_at_infinity < -1e-12:
            raise ValueError("masses must be nonnegative")
        if abs(m.sum() + self.mass_at_infinity - 1.0) > 1e-6:
            raise ValueError("masses must sum to one")
        object.__setattr__(self, "jump_points", jp)
        object.__setattr__(self, "masses", m)

    @property
    def levels(self) -> np.ndarray:
        """Survival level right of each jump point."""
        return 1.0 - np.cumsum(self.masses)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.jump_points, x, side="right")
        lev = np.concatenate(([1.0], self.levels))
        out = lev[idx]
        return out[()] if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {
            "points": self.jump_points.tolist(),
            "survival": self.levels.tolist(),
            "q": self.mass_at_infinity,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _innermost_intervals(d: Dataset):
    """Maximal intersections on the discretized position line.

    Position 2k is the point tau_k, position 2k+1 the open gap after it;
    +inf sits past the last gap.  Every observation is then an integer
    interval, and the maximal intersections are the classic
    start-followed-by-nearest-end pairs with no other start in between.
    """
    taus = np.unique(
        np.concatenate(
            [
                [o.left for o in d.observations],
                [o.right for o in d.observations if not o.is_right_censored],
            ]
        )
    )
    m = taus.size
    inf_pos = 2 * m - 1
    starts = []
    ends = []
    spans = []
    for o in d.observations:
        il = int(np.searchsorted(taus, o.left))
        if o.is_exact:
            s, e = 2 * il, 2 * il
        else:
            e = inf_pos if o.is_right_censored else 2 * int(np.searchsorted(taus, o.right))
            s = 2 * il + 1
        starts.append(s)
        ends.append(e)
        spans.append((s, e))
    start_set = np.unique(starts)
    end_set = np.unique(ends)
    atoms = []
    for s in start_set:
        k = int(np.searchsorted(end_set, s))
        if k == end_set.size:
            continue
        e = int(end_set[k])
        if np.any((start_set > s) & (start_set <= e)):
            continue
        atoms.append(e)
    atoms = sorted(set(atoms))
    locs = [math.inf if a == inf_pos else float(taus[a // 2]) for a in atoms]
    membership = np.array([[s <= a <= e for a in atoms] for (s, e) in spans])
    return np.asarray(locs), membership


def turnbull(d: Dataset, tol: float = 1e-8, max_iter: int = 100000) -> StepSurvival:
    """Self-consistency EM over the innermost-interval masses."""
    locs, member = _innermost_intervals(d)
    wts = d.effective_weights()
    k = locs.size
    m = np.full(k, 1.0 / k)
    a = member.astype(float)
    for _ in range(max_iter):
        denom = a @ m
        m_new = m * (a.T @ (wts / denom))
        delta = float(np.max(np.abs(m_new - m)))
        m = m_new
        if delta < tol:
            break
    m = m / m.sum()
    finite = np.isfinite(locs)
    return StepSurvival(locs[finite], m[finite], float(np.sum(m[~finite])))


def turnbull_loglik(d: Dataset, s: StepSurvival) -> float:
    """Interval log-likelihood of a step distribution (no exact observations)."""
    locs = np.concatenate([s.jump_points, [math.inf]]) if s.mass_at_infinity > 0 else s.jump_points
    masses = np.concatenate([s.masses, [s.mass_at_infinity]]) if s.mass_at_infinity > 0 else s.masses
    wts = d.effective_weights()
    total = 0.0
    for o, w in zip(d.observations, wts):
        if o.is_exact:
            raise ValueError("interval log-likelihood undefined for exact observations")
        pr = float(np.sum(masses[(locs > o.left) & (locs <= o.right)]))
        if pr <= 0:
            return -math.inf
        total += w * math.log(pr)
    return total


def sup_distance(s, reference, eval_points) -> float:
    """Supremum of |S_hat - reference| over the evaluation grid.

    Step estimators are additionally evaluated from both sides of every
    jump; log-concave fits at every knot.  ``reference`` must accept
    numpy arrays.
    """
    pts = np.asarray(eval_points, dtype=float)
    if pts.size == 0:
        raise ValueError("eval_points must be nonempty")
    if isinstance(s, StepSurvival):
        xs = np.concatenate([pts, s.jump_points])
        worst = float(np.max(np.abs(s.survival(xs) - reference(xs))))
        if s.jump_points.size:
            left_levels = np.concatenate(([1.0], s.levels[:-1]))
            worst = max(worst, float(np.max(np.abs(left_levels - reference(s.jump_points)))))
        return worst
    if isinstance(s, LogConcaveFit):
        xs = np.concatenate([pts, s.grid.knots])
        return float(np.max(np.abs(survival_at(s, xs) - reference(xs))))
    raise TypeError("expected a StepSurvival or LogConcaveFit")
