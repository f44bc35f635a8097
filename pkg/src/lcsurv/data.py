"""Censored data model, file ingestion and pre-estimation checks.

An observation is either an exact point {x} (left == right) or a
half-open interval (left, right] with right possibly +inf.  Before any
optimization runs, the dataset is screened for non-existence of the
MLE and for the closed-form corner cases where all observation
intervals share a common point or interval.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .density import Grid


class NoMleError(Exception):
    """The likelihood is unbounded; no maximizer exists."""

    def __init__(self, witness: float | None, message: str):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True)
class Observation:
    """One censored datum: exact point when left == right, else (left, right]."""

    left: float
    right: float

    def __post_init__(self):
        if not math.isfinite(self.left):
            raise ValueError("left endpoint must be finite")
        if math.isnan(self.right) or self.left > self.right:
            raise ValueError(f"invalid observation ({self.left}, {self.right}]")

    @property
    def is_exact(self) -> bool:
        return self.left == self.right

    @property
    def is_right_censored(self) -> bool:
        return math.isinf(self.right)


@dataclass(frozen=True)
class Dataset:
    observations: tuple[Observation, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if len(self.observations) < 1:
            raise ValueError("dataset needs at least one observation")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(self.observations):
                raise ValueError("weights must match observations")
            if any(x <= 0 for x in w):
                raise ValueError("weights must be positive")
            if abs(sum(w) - 1.0) > 1e-8:
                raise ValueError("weights must sum to one")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.observations)

    def effective_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return np.asarray(self.weights, dtype=float)

    def lefts(self) -> np.ndarray:
        return np.array([o.left for o in self.observations])

    def rights(self) -> np.ndarray:
        return np.array([o.right for o in self.observations])


@dataclass(frozen=True)
class TauGrid:
    """Sorted unique finite interval endpoints; tau_{m+1} = inf is implicit."""

    taus: tuple[float, ...]
    has_infinite_right: bool

    @property
    def m(self) -> int:
        return len(self.taus)


class DegenerateKind(enum.Enum):
    NO_MLE = "no-mle"
    INTERVAL_MASS = "interval-mass"
    TWO_PIECE_LINEAR = "two-piece-linear"


@dataclass(frozen=True)
class DegenerateSolution:
    kind: DegenerateKind
    support: tuple[float, ...]
    masses: tuple[float, ...]
    description: str


@dataclass(frozen=True)
class ExistenceResult:
    exists: bool
    witness: float | None = None


@dataclass(frozen=True)
class GridPolicy:
    """Refinement of the tau grid by maximum knot spacing.

    ``max_spacing`` defaults to (tau_m - tau_1) / 200; at most
    ``max_points_per_gap`` extra knots go into any one gap.
    """

    max_spacing: float | None = None
    max_points_per_gap: int = 50


def _parse_float(field: str, row_idx: int, what: str) -> float:
    try:
        return float(field)
    except ValueError:
        raise ValueError(f"row {row_idx}: cannot parse {what} value {field!r}") from None


def load_dataset(path, format: str = "csv") -> Dataset:
    """Read observations from a CSV file.

    ``csv``: two columns left,right; right may be a number, ``inf`` or
    empty (both meaning right-censored).  ``survival-csv``: columns
    time,status with status 1 = exact event, 0 = right-censored.
    A non-numeric first row is treated as a header.
    """
    if format not in ("csv", "survival-csv"):
        raise ValueError(f"unknown format {format!r}")
    obs: list[Observation] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for idx, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ValueError(f"row {idx}: expected two columns, got {len(row)}")
            a, b = row[0].strip(), row[1].strip()
            if idx == 0:
                try:
                    float(a)
                except ValueError:
                    continue  # header
            if format == "csv":
                left = _parse_float(a, idx, "left")
                right = math.inf if b == "" or b.lower() == "inf" else _parse_float(b, idx, "right")
            else:
                time = _parse_float(a, idx, "time")
                status = _parse_float(b, idx, "status")
                if status not in (0.0, 1.0):
                    raise ValueError(f"row {idx}: status must be 0 or 1, got {b!r}")
                left, right = (time, time) if status == 1.0 else (time, math.inf)
            try:
                obs.append(Observation(left, right))
            except ValueError as exc:
                raise ValueError(f"row {idx}: {exc}") from None
    return Dataset(tuple(obs))


def load_ovarian() -> Dataset:
    """The bundled ovarian carcinoma survival data (26 patients, 12 events)."""
    ref = resources.files("lcsurv").joinpath("datasets/ovarian.csv")
    with resources.as_file(ref) as p:
        return load_dataset(p, format="survival-csv")


def compute_tau_grid(d: Dataset) -> TauGrid:
    vals = set()
    has_inf = False
    for o in d.observations:
        vals.add(o.left)
        if o.is_right_censored:
            has_inf = True
        else:
            vals.add(o.right)
    return TauGrid(tuple(sorted(vals)), has_inf)


def check_existence(d: Dataset, allow_cure: bool) -> ExistenceResult:
    """MLE existence test: no exact point may be covered by every interval.

    With ``allow_cure`` the covering condition weakens per observation to
    "x in [L, R] or R = inf", so non-existence without cure does not imply
    non-existence with cure is violated, only the converse.
    """
    exact_points = {o.left for o in d.observations if o.is_exact}
    for x in sorted(exact_points):
        covered = all(
            (o.left <= x <= o.right) or (allow_cure and o.is_right_censored)
            for o in d.observations
        )
        if covered:
            return ExistenceResult(False, x)
    return ExistenceResult(True)


def classify_degenerate(d: Dataset) -> DegenerateSolution | None:
    """Closed-form corner cases when all intervals [L_i, R_i] intersect.

    Returns None when the intersection is empty (the generic case that the
    EM machinery handles).
    """
    lo = max(o.left for o in d.observations)
    hi = min(o.right for o in d.observations)
    if lo > hi:
        return None
    if lo < hi:
        return DegenerateSolution(
            kind=DegenerateKind.INTERVAL_MASS,
            support=(lo, hi),
            masses=(1.0,),
            description=f"every MLE puts probability one on ({lo}, "
            f"{'inf' if math.isinf(hi) else hi}]",
        )
    mu = lo
    if any(o.is_exact and o.left == mu for o in d.observations):
        return DegenerateSolution(
            kind=DegenerateKind.NO_MLE,
            support=(mu,),
            masses=(),
            description=f"likelihood unbounded: exact observation at {mu} "
            "lies in every interval",
        )
    n_left = sum(1 for o in d.observations if o.left < mu == o.right)
    n_right = sum(1 for o in d.observations if o.left == mu < o.right)
    a = max(o.left for o in d.observations if o.left < mu)
    b = min(o.right for o in d.observations if o.right > mu)
    return DegenerateSolution(
        kind=DegenerateKind.TWO_PIECE_LINEAR,
        support=(a, mu, b),
        masses=(n_left / (n_left + n_right), n_right / (n_left + n_right)),
        description=f"MLE splits mass {n_left}/{n_left + n_right} on ({a}, {mu}] "
        f"and {n_right}/{n_left + n_right} on ({mu}, {'inf' if math.isinf(b) else b}]",
    )


def build_estimation_grid(tg: TauGrid, d: Dataset, refine: GridPolicy = GridPolicy()) -> Grid:
    """Tau grid plus refinement points where interior knots may move.

    Extra points go only into gaps (tau_j, tau_{j+1}) between the first
    left endpoint past tau_1 and the last right endpoint before tau_m, and
    only when the gap meets some observation interval; elsewhere the fit
    is provably linear between consecutive taus.
    """
    taus = np.asarray(tg.taus, dtype=float)
    m = taus.size
    if m < 2:
        raise ValueError("need at least two distinct endpoints to build a grid")
    lefts = {o.left for o in d.observations}
    rights = {o.right for o in d.observations if not o.is_right_censored}

    j1 = next((j for j in range(1, m) if taus[j] in lefts), None)
    j2 = next((j for j in range(m - 2, -1, -1) if taus[j] in rights), None)
    if j1 is None or j2 is None or j1 >= j2:
        return Grid(taus)

    covered = np.zeros(m - 1, dtype=bool)
    for o in d.observations:
        if o.is_exact:
            continue
        gl = int(np.searchsorted(taus, o.left))
        gr = m - 1 if o.is_right_censored else int(np.searchsorted(taus, o.right))
        covered[gl:gr] = True

    h = refine.max_spacing
    if h is None:
        h = (taus[-1] - taus[0]) / 200.0
    pieces = [taus]
    for g in range(j1, j2):
        if not covered[g]:
            continue
        width = taus[g + 1] - taus[g]
        k = min(math.ceil(width / h) - 1, refine.max_points_per_gap)
        if k > 0:
            pieces.append(np.linspace(taus[g], taus[g + 1], k + 2)[1:-1])
    return Grid(np.unique(np.concatenate(pieces)))
