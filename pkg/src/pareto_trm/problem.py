"""Heterogeneous multiobjective problems, box feasible sets and the evaluation database.

All optimizer-internal geometry lives in scaled coordinates: box-constrained
problems are mapped onto the unit hypercube [0,1]^n, unconstrained problems are
left untouched (identity map). The database stores sites in the problem's
original coordinates and dedupes / searches in scaled coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BudgetExhausted,
    DimensionMismatch,
    InfeasiblePoint,
    ObjectiveFailure,
)

UNCONSTRAINED = "unconstrained"
BOX = "box"

#: cache-hit tolerance for database lookups, in scaled coordinates
CACHE_TOL = 1e-14


@dataclass(frozen=True)
class FeasibleSet:
    """Either all of R^n or an axis-aligned box with finite bounds."""

    kind: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (UNCONSTRAINED, BOX):
            raise ValueError(f"unknown feasible-set kind {self.kind!r}")
        if self.kind == BOX:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or lo.ndim != 1:
                raise DimensionMismatch("box bounds must be 1-d arrays of equal length")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("box bounds must be finite")
            if not np.all(hi > lo):
                raise ValueError("box requires upper > lower componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def unconstrained(cls) -> "FeasibleSet":
        return cls(UNCONSTRAINED)

    @classmethod
    def box(cls, lower, upper) -> "FeasibleSet":
        return cls(BOX, np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))

    @property
    def is_box(self) -> bool:
        return self.kind == BOX

    def width(self) -> Optional[np.ndarray]:
        return None if not self.is_box else self.upper - self.lower

    def contains(self, x: np.ndarray) -> bool:
        if not self.is_box:
            return True
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def scaled(self) -> "FeasibleSet":
        """The set the optimizer works in: [0,1]^n for boxes, self otherwise."""
        if not self.is_box:
            return self
        n = self.lower.size
        return FeasibleSet.box(np.zeros(n), np.ones(n))


def _check_dim(x: np.ndarray, fs: FeasibleSet) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if fs.is_box and x.shape != fs.lower.shape:
        raise DimensionMismatch(f"expected length {fs.lower.size}, got shape {x.shape}")
    return x


def scale_to_unit(x, fs: FeasibleSet) -> np.ndarray:
    """Map a feasible point into [0,1]^n (identity for unconstrained sets)."""
    x = _check_dim(x, fs)
    if not fs.is_box:
        return x.copy()
    return (x - fs.lower) / (fs.upper - fs.lower)


def unscale_from_unit(z, fs: FeasibleSet) -> np.ndarray:
    """Inverse of :func:`scale_to_unit`."""
    z = _check_dim(z, fs)
    if not fs.is_box:
        return z.copy()
    return fs.lower + z * (fs.upper - fs.lower)


def project_to_box(x, fs: FeasibleSet) -> np.ndarray:
    """Componentwise clamp onto the box; identity for unconstrained sets."""
    x = _check_dim(x, fs)
    if not fs.is_box:
        return x.copy()
    return np.clip(x, fs.lower, fs.upper)


@dataclass
class MOProblem:
    """A vector objective with per-objective expensive/cheap tagging.

    objectives are scalar evaluators f_l(x) -> float over the original
    coordinates. gradient_callbacks[l], when given, must belong to a cheap
    objective and return the gradient in original coordinates.
    """

    n_vars: int
    n_objs: int
    objectives: Sequence[Callable[[np.ndarray], float]]
    expensive_mask: np.ndarray
    feasible: FeasibleSet
    gradient_callbacks: Optional[Sequence[Optional[Callable]]] = None
    name: str = ""

    def __post_init__(self):
        self.expensive_mask = np.asarray(self.expensive_mask, dtype=bool)
        if self.n_vars < 1 or self.n_objs < 1:
            raise ValueError("n_vars and n_objs must be positive")
        if len(self.objectives) != self.n_objs:
            raise DimensionMismatch("need one evaluator per objective")
        if self.expensive_mask.shape != (self.n_objs,):
            raise DimensionMismatch("expensive_mask must have length n_objs")
        if self.feasible.is_box and self.feasible.lower.size != self.n_vars:
            raise DimensionMismatch("feasible set dimension mismatch")
        if self.gradient_callbacks is None:
            self.gradient_callbacks = [None] * self.n_objs
        if len(self.gradient_callbacks) != self.n_objs:
            raise DimensionMismatch("need one gradient slot per objective")
        for idx, cb in enumerate(self.gradient_callbacks):
            if cb is not None and self.expensive_mask[idx]:
                raise ValueError("gradient callbacks are only allowed on cheap objectives")

    @property
    def expensive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.expensive_mask)

    @property
    def cheap_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.expensive_mask)

    def scale(self, x) -> np.ndarray:
        return scale_to_unit(x, self.feasible)

    def unscale(self, z) -> np.ndarray:
        return unscale_from_unit(z, self.feasible)

    def evaluate_raw(self, x) -> np.ndarray:
        """Evaluate all objectives without caching or feasibility checks."""
        x = np.asarray(x, dtype=float)
        out = np.array([float(f(x)) for f in self.objectives])
        if not np.all(np.isfinite(out)):
            raise ObjectiveFailure(f"objective returned non-finite value at {x!r}", site=x)
        return out


class EvaluationDatabase:
    """Append-only store of evaluated sites and objective vectors.

    Single writer; read-only queries may run concurrently. Sites are kept in
    original coordinates with a parallel scaled copy used for cache hits and
    ball queries.
    """

    def __init__(self, problem: MOProblem, max_expensive: Optional[int] = None):
        self.problem = problem
        self.max_expensive = max_expensive
        self.sites: list[np.ndarray] = []
        self.values: list[np.ndarray] = []
        self.eval_counts = np.zeros(problem.n_objs, dtype=int)
        self._scaled = np.empty((0, problem.n_vars))

    def __len__(self) -> int:
        return len(self.sites)

    def _find(self, z: np.ndarray) -> Optional[int]:
        if len(self.sites) == 0:
            return None
        dist = np.max(np.abs(self._scaled - z), axis=1)
        hits = np.flatnonzero(dist <= CACHE_TOL)
        return int(hits[0]) if hits.size else None

    def evaluate(self, x) -> np.ndarray:
        """Return f(x), caching by site; counts expensive evaluations once per site."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.problem.n_vars,):
            raise DimensionMismatch(f"expected length {self.problem.n_vars}")
        if not self.problem.feasible.contains(x):
            raise InfeasiblePoint(f"site {x!r} violates the hard constraints")
        z = self.problem.scale(x)
        idx = self._find(z)
        if idx is not None:
            return self.values[idx].copy()
        exp = self.problem.expensive_mask
        if self.max_expensive is not None and np.any(exp):
            if np.any(self.eval_counts[exp] + 1 > self.max_expensive):
                raise BudgetExhausted(
                    f"expensive budget {self.max_expensive} would be exceeded"
                )
        vals = self.problem.evaluate_raw(x)
        self.sites.append(x.copy())
        self.values.append(vals)
        self._scaled = np.vstack([self._scaled, z[None, :]])
        self.eval_counts[exp] += 1
        return vals.copy()

    def evaluate_scaled(self, z) -> np.ndarray:
        """Evaluate at a point given in scaled coordinates."""
        return self.evaluate(self.problem.unscale(np.asarray(z, dtype=float)))

    def query_ball(self, center, radius: float) -> list[tuple[np.ndarray, np.ndarray]]:
        """All entries with scaled inf-distance <= radius, closest first.

        Ties break by insertion index, so the order is deterministic. Returned
        sites are in scaled coordinates (the optimizer's working frame).
        """
        if radius <= 0:
            raise ValueError("radius must be positive")
        center = np.asarray(center, dtype=float)
        if len(self.sites) == 0:
            return []
        dist = np.max(np.abs(self._scaled - center), axis=1)
        inside = np.flatnonzero(dist <= radius)
        order = inside[np.argsort(dist[inside], kind="stable")]
        return [(self._scaled[i].copy(), self.values[i].copy()) for i in order]

    def remaining_budget(self) -> Optional[int]:
        if self.max_expensive is None:
            return None
        exp = self.problem.expensive_mask
        if not np.any(exp):
            return None
        return int(self.max_expensive - self.eval_counts[exp].max())

    def to_csv(self, path) -> None:
        """Dump sites (original coordinates) and values: x_1..x_n, f_1..f_k."""
        n, k = self.problem.n_vars, self.problem.n_objs
        header = [f"x_{i + 1}" for i in range(n)] + [f"f_{j + 1}" for j in range(k)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for site, vals in zip(self.sites, self.values):
                writer.writerow([repr(float(v)) for v in site] + [repr(float(v)) for v in vals])

    @classmethod
    def from_csv(cls, path, problem: MOProblem) -> "EvaluationDatabase":
        """Rebuild a database from a CSV dump; values are trusted, not re-evaluated."""
        db = cls(problem)
        n, k = problem.n_vars, problem.n_objs
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if len(header) != n + k:
                raise DimensionMismatch("CSV column count does not match the problem")
            for row in reader:
                site = np.array([float(v) for v in row[:n]])
                vals = np.array([float(v) for v in row[n:]])
                if not problem.feasible.contains(site):
                    raise InfeasiblePoint(f"CSV site {site!r} is infeasible")
                db.sites.append(site)
                db.values.append(vals)
                db._scaled = np.vstack([db._scaled, problem.scale(site)[None, :]])
                db.eval_counts[problem.expensive_mask] += 1
        return db


def evaluate(db: EvaluationDatabase, prob: MOProblem, x) -> np.ndarray:
    """Functional form of :meth:`EvaluationDatabase.evaluate`."""
    if db.problem is not prob:
        raise ValueError("database belongs to a different problem")
    return db.evaluate(x)
