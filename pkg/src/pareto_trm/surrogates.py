"""Fully linear surrogate bundles: RBF, Lagrange, FD-Taylor and exact wrappers.

Builders work in the optimizer's scaled coordinates. Interpolation systems are
assembled in trust-region-local coordinates t = (u - center) / (theta1 * Delta)
so conditioning does not degrade as the radius shrinks; shape parameters are
rescaled accordingly so the model in u-space is unchanged.

Full linearity is certified structurally: an affinely independent point set
(pivot threshold) inside the theta1-enlarged region for RBF, a Lambda-poised
set for Lagrange models. The O(Delta^2)/O(Delta) error decay this buys is
checked empirically in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    SingularMatrix,
)
from .linalg import (
    fd_gradient,
    halton,
    maximize_abs_over_box,
    solve_linear,
)
from .problem import EvaluationDatabase, FeasibleSet, MOProblem

PIVOT_THRESHOLD = 1e-4
KERNELS = ("cubic", "multiquadric", "gaussian")
KINDS = ("exact-cheap", "taylor-fd1", "lagrange", "rbf")


@dataclass(frozen=True)
class ModelSpec:
    """How to build the surrogate for one (expensive) objective."""

    kind: str = "rbf"
    degree: int = 1  # lagrange only
    kernel: str = "cubic"  # rbf only
    tail_degree: int = 1  # rbf polynomial tail
    shape_mode: str = "fixed"  # rbf: fixed | adaptive
    alpha: float = 1.0
    c_alpha: float = 20.0
    alpha_lo: float = 1e-2
    alpha_hi: float = 1e3
    theta1: float = 2.0
    theta2: float = 5.0
    lambda_poised: float = 1.5
    max_extra_points: Optional[int] = None
    fd_step: float = 1e-2  # taylor, relative to the radius

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "lagrange" and self.degree not in (1, 2):
            raise ValueError("lagrange degree must be 1 or 2")
        if self.kind == "rbf":
            if self.kernel not in KERNELS:
                raise ValueError(f"unknown kernel {self.kernel!r}")
            if self.tail_degree not in (0, 1):
                raise ValueError("tail degree must be 0 or 1")
            if self.kernel == "cubic" and self.tail_degree != 1:
                raise ValueError("the cubic kernel (c.p.d. order 2) needs a linear tail")
            if self.shape_mode not in ("fixed", "adaptive"):
                raise ValueError("shape_mode must be 'fixed' or 'adaptive'")
        if self.lambda_poised <= 1.0:
            raise ValueError("lambda_poised must exceed 1")
        if not (self.theta2 >= self.theta1 >= 1.0):
            raise ValueError("need theta2 >= theta1 >= 1")


MODEL_SPECS = {
    "rbf-cubic": ModelSpec(kind="rbf", kernel="cubic", tail_degree=1),
    "rbf-multiquadric": ModelSpec(kind="rbf", kernel="multiquadric", tail_degree=1),
    "rbf-gaussian": ModelSpec(kind="rbf", kernel="gaussian", tail_degree=1),
    "rbf-multiquadric-adaptive": ModelSpec(
        kind="rbf", kernel="multiquadric", tail_degree=1, shape_mode="adaptive"
    ),
    "rbf-gaussian-adaptive": ModelSpec(
        kind="rbf", kernel="gaussian", tail_degree=1, shape_mode="adaptive"
    ),
    "lagrange-1": ModelSpec(kind="lagrange", degree=1),
    "lagrange-2": ModelSpec(kind="lagrange", degree=2),
    "taylor-fd1": ModelSpec(kind="taylor-fd1"),
}


def adaptive_shape(radius: float, c_alpha: float, alpha_lo: float, alpha_hi: float) -> float:
    """Shape parameter inversely proportional to the radius, clamped."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not (0 < alpha_lo <= alpha_hi):
        raise ValueError("need 0 < alpha_lo <= alpha_hi")
    return float(min(max(c_alpha / radius, alpha_lo), alpha_hi))


def kernel_value(kernel: str, r, alpha: float = 1.0):
    """phi(r) for the supported radial functions."""
    r = np.asarray(r, dtype=float)
    if kernel == "cubic":
        return r**3
    if kernel == "multiquadric":
        return -np.sqrt(1.0 + (alpha * r) ** 2)
    if kernel == "gaussian":
        return np.exp(-((alpha * r) ** 2))
    raise ValueError(f"unknown kernel {kernel!r}")


def _kernel_w(kernel: str, r, alpha: float):
    """phi'(r)/r, finite at r = 0 for all supported kernels."""
    if kernel == "cubic":
        return 3.0 * r
    if kernel == "multiquadric":
        return -(alpha**2) / np.sqrt(1.0 + (alpha * r) ** 2)
    return -2.0 * alpha**2 * np.exp(-((alpha * r) ** 2))


def _kernel_a(kernel: str, r, alpha: float):
    """(phi''(r) - phi'(r)/r) / r^2; cubic needs the r -> 0 guard downstream."""
    if kernel == "cubic":
        return 3.0 / np.maximum(r, 1e-30)
    if kernel == "multiquadric":
        return alpha**4 / (1.0 + (alpha * r) ** 2) ** 1.5
    return 4.0 * alpha**4 * np.exp(-((alpha * r) ** 2))


def _region_box(center, radius, fs: FeasibleSet):
    center = np.asarray(center, dtype=float)
    lo = center - radius
    hi = center + radius
    if fs.is_box:
        lo = np.maximum(lo, fs.lower)
        hi = np.minimum(hi, fs.upper)
    return lo, hi


class ExactCheapModel:
    """Wraps a cheap objective as its own model (gradient callback or FD)."""

    kind = "exact-cheap"
    fully_linear = True
    geometry_score = float("inf")

    def __init__(self, prob: MOProblem, index: int, fd_step: float = 1e-7):
        self.prob = prob
        self.index = index
        self.fd_step = fd_step
        self._fn = prob.objectives[index]
        self._cb = prob.gradient_callbacks[index]
        fs = prob.feasible
        self._width = fs.width() if fs.is_box else None
        fss = fs.scaled()
        self._lo = fss.lower if fss.is_box else np.full(prob.n_vars, -np.inf)
        self._hi = fss.upper if fss.is_box else np.full(prob.n_vars, np.inf)
        self.training_sites = np.empty((0, prob.n_vars))

    def _scalar(self, u):
        return float(self._fn(self.prob.unscale(np.asarray(u, dtype=float))))

    def values(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.array([self._scalar(u) for u in U])

    def value(self, u) -> float:
        return self._scalar(u)

    def gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self._cb is not None:
            g = np.asarray(self._cb(self.prob.unscale(u)), dtype=float)
            return g * self._width if self._width is not None else g
        return fd_gradient(self._scalar, u, self.fd_step, self._lo, self._hi)

    def gradients(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.vstack([self.gradient(u) for u in U])

    def hessian(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        n = u.size
        h = 1e-5
        H = np.empty((n, n))
        for i in range(n):
            up = min(u[i] + h, self._hi[i])
            dn = max(u[i] - h, self._lo[i])
            up_pt, dn_pt = u.copy(), u.copy()
            up_pt[i], dn_pt[i] = up, dn
            span = up - dn
            if span <= 0:
                H[i] = 0.0
                continue
            H[i] = (self.gradient(up_pt) - self.gradient(dn_pt)) / span
        return 0.5 * (H + H.T)

    def hessian_norm_bound(self, lo, hi, extra=None, seed=0) -> float:
        pts = lo + halton(25, lo.size, offset=17 + seed) * (hi - lo)
        if extra is not None and len(extra):
            pts = np.vstack([pts, extra])
        worst = max(float(np.linalg.norm(self.hessian(p))) for p in pts)
        return 1.1 * worst

    def debug_dict(self) -> dict:
        return {"kind": self.kind, "objective": self.index}


class PolyModel:
    """Polynomial model of degree <= 2 in local coordinates t = (u - center)/R."""

    def __init__(
        self,
        center,
        local_scale: float,
        c0: float,
        g_local,
        H_local,
        degree: int,
        fully_linear: bool = True,
        geometry_score: float = 0.0,
        machine=None,
        training_sites=None,
        kind: str = "lagrange",
    ):
        self.center = np.asarray(center, dtype=float)
        self.R = float(local_scale)
        self.c0 = float(c0)
        self.g_local = np.asarray(g_local, dtype=float)
        self.H_local = np.asarray(H_local, dtype=float)
        self.degree = degree
        self.fully_linear = fully_linear
        self.geometry_score = geometry_score
        self.machine = machine
        self.training_sites = (
            np.empty((0, self.center.size)) if training_sites is None else np.asarray(training_sites)
        )
        self.kind = kind

    def _local(self, U):
        return (np.atleast_2d(np.asarray(U, dtype=float)) - self.center) / self.R

    def values(self, U) -> np.ndarray:
        T = self._local(U)
        out = self.c0 + T @ self.g_local
        if self.degree >= 2:
            out = out + 0.5 * np.einsum("ij,ij->i", T @ self.H_local, T)
        return out

    def value(self, u) -> float:
        return float(self.values(u)[0])

    def gradients(self, U) -> np.ndarray:
        T = self._local(U)
        G = np.tile(self.g_local, (T.shape[0], 1))
        if self.degree >= 2:
            G = G + T @ self.H_local
        return G / self.R

    def gradient(self, u) -> np.ndarray:
        return self.gradients(u)[0]

    def hessian(self, u) -> np.ndarray:
        return self.H_local / self.R**2

    def hessian_norm_bound(self, lo, hi, extra=None, seed=0) -> float:
        return float(np.linalg.norm(self.H_local)) / self.R**2

    def debug_dict(self) -> dict:
        return {
            "kind": self.kind,
            "degree": self.degree,
            "center": [float(v) for v in self.center],
            "local_scale": self.R,
            "c0": self.c0,
            "g_local": [float(v) for v in self.g_local],
            "H_local": [[float(v) for v in row] for row in self.H_local],
            "training_sites": [[float(v) for v in s] for s in self.training_sites],
        }


class RBFModel:
    """Radial basis surrogate with polynomial tail, in local coordinates."""

    kind = "rbf"

    def __init__(
        self,
        center,
        local_scale: float,
        local_sites,
        coeffs,
        tail_c0: float,
        tail_g_local,
        kernel: str,
        alpha_local: float,
        alpha_user: float,
        fully_linear: bool = True,
        geometry_score: float = 0.0,
        training_sites=None,
    ):
        self.center = np.asarray(center, dtype=float)
        self.R = float(local_scale)
        self.T = np.atleast_2d(np.asarray(local_sites, dtype=float))
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.tail_c0 = float(tail_c0)
        self.tail_g_local = np.asarray(tail_g_local, dtype=float)
        self.kernel = kernel
        self.alpha_local = float(alpha_local)
        self.alpha_user = float(alpha_user)
        self.fully_linear = fully_linear
        self.geometry_score = geometry_score
        self.training_sites = (
            np.empty((0, self.center.size)) if training_sites is None else np.asarray(training_sites)
        )

    def _local(self, U):
        return (np.atleast_2d(np.asarray(U, dtype=float)) - self.center) / self.R

    def _dists(self, T):
        diff = T[:, None, :] - self.T[None, :, :]
        return np.sqrt(np.maximum(np.einsum("mkn,mkn->mk", diff, diff), 0.0)), diff

    def values(self, U) -> np.ndarray:
        T = self._local(U)
        r, _ = self._dists(T)
        vals = kernel_value(self.kernel, r, self.alpha_local) @ self.coeffs
        return vals + self.tail_c0 + T @ self.tail_g_local

    def value(self, u) -> float:
        return float(self.values(u)[0])

    def gradients(self, U) -> np.ndarray:
        T = self._local(U)
        r, diff = self._dists(T)
        W = _kernel_w(self.kernel, r, self.alpha_local) * self.coeffs[None, :]
        G = np.einsum("mk,mkn->mn", W, diff) + self.tail_g_local
        return G / self.R

    def gradient(self, u) -> np.ndarray:
        return self.gradients(u)[0]

    def hessian(self, u) -> np.ndarray:
        t = self._local(u)[0]
        diff = t[None, :] - self.T
        r = np.sqrt(np.maximum(np.sum(diff**2, axis=1), 0.0))
        n = t.size
        H = np.zeros((n, n))
        w = _kernel_w(self.kernel, r, self.alpha_local)
        a = _kernel_a(self.kernel, r, self.alpha_local)
        for i in range(self.T.shape[0]):
            v = diff[i]
            if r[i] > 1e-14:
                H += self.coeffs[i] * (a[i] * np.outer(v, v) + w[i] * np.eye(n))
            else:
                H += self.coeffs[i] * w[i] * np.eye(n)
        return H / self.R**2

    def hessian_norm_bound(self, lo, hi, extra=None, seed=0) -> float:
        pts = lo + halton(100, lo.size, offset=29 + seed) * (hi - lo)
        if extra is not None and len(extra):
            pts = np.vstack([pts, extra])
        T = self._local(pts)
        r, diff = self._dists(T)
        w = _kernel_w(self.kernel, r, self.alpha_local)
        a = np.where(r > 1e-14, _kernel_a(self.kernel, r, self.alpha_local), 0.0)
        H = np.einsum("mk,mki,mkj->mij", self.coeffs[None, :] * a, diff, diff)
        trace_part = (self.coeffs[None, :] * w).sum(axis=1)
        H[:, np.arange(T.shape[1]), np.arange(T.shape[1])] += trace_part[:, None]
        norms = np.sqrt(np.einsum("mij,mij->m", H, H)) / self.R**2
        return 1.1 * float(norms.max())

    def debug_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kernel": self.kernel,
            "shape_alpha": self.alpha_user,
            "center": [float(v) for v in self.center],
            "local_scale": self.R,
            "coeffs": [float(v) for v in self.coeffs],
            "tail_c0": self.tail_c0,
            "tail_g_local": [float(v) for v in self.tail_g_local],
            "training_sites": [[float(v) for v in s] for s in self.training_sites],
        }


def model_debug_json(model) -> str:
    """Stable JSON dump of a model (schema frozen by golden-file tests)."""
    return json.dumps(model.debug_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# polynomial basis helpers


def poly_basis_size(n: int, degree: int) -> int:
    return n + 1 if degree == 1 else (n + 1) * (n + 2) // 2


_TRIU_CACHE: dict = {}


def _triu(n: int):
    if n not in _TRIU_CACHE:
        _TRIU_CACHE[n] = np.triu_indices(n)  # (i, j) pairs with i <= j, row-major
    return _TRIU_CACHE[n]


def _basis_eval(T: np.ndarray, degree: int) -> np.ndarray:
    m, n = T.shape
    if degree == 1:
        out = np.empty((m, n + 1))
        out[:, 0] = 1.0
        out[:, 1:] = T
        return out
    iu, ju = _triu(n)
    out = np.empty((m, 1 + n + iu.size))
    out[:, 0] = 1.0
    out[:, 1: n + 1] = T
    out[:, n + 1:] = T[:, iu] * T[:, ju]
    return out


def _coeffs_to_quadratic(a: np.ndarray, n: int, degree: int):
    c0 = float(a[0])
    g = np.array(a[1: n + 1], dtype=float)
    H = np.zeros((n, n))
    if degree == 2:
        pos = n + 1
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    H[i, i] = 2.0 * a[pos]
                else:
                    H[i, j] = H[j, i] = a[pos]
                pos += 1
    return c0, g, H


class _LagrangeMachine:
    """Poised-set selection and Lambda-poisedness repair for one region.

    Keeps the Lagrange basis as coefficient rows over the monomial basis in
    local coordinates. log_volume (sum of log-pivots) strictly increases with
    every repair swap, which is the finiteness certificate.
    """

    def __init__(self, n, degree, center, local_scale, box_lo, box_hi, lam, seed=0):
        self.n = n
        self.degree = degree
        self.p = poly_basis_size(n, degree)
        self.center = np.asarray(center, dtype=float)
        self.R = float(local_scale)
        self.lo = np.asarray(box_lo, dtype=float)
        self.hi = np.asarray(box_hi, dtype=float)
        self.lam = float(lam)
        self.seed = seed
        self.L = np.eye(self.p)
        self.sites: list[np.ndarray] = []
        self.pivots: list[float] = []
        self.log_volume = 0.0
        self.certified = False

    def _row_value_fn(self, i):
        row = self.L[i].copy()

        def value(U):
            T = (np.atleast_2d(np.asarray(U, dtype=float)) - self.center) / self.R
            return _basis_eval(T, self.degree) @ row

        def grad(U):
            T = (np.atleast_2d(np.asarray(U, dtype=float)) - self.center) / self.R
            _, g, H = _coeffs_to_quadratic(row, self.n, self.degree)
            G = np.tile(g, (T.shape[0], 1))
            if self.degree == 2:
                G = G + T @ H
            return G / self.R

        return value, grad

    def _normalize_and_sweep(self, i, site):
        t = ((np.asarray(site, dtype=float) - self.center) / self.R)[None, :]
        vals = self.L @ _basis_eval(t, self.degree)[0]  # every row at the site
        pivot = float(vals[i])
        if abs(pivot) < 1e-14:
            raise DegenerateGeometry("zero pivot during Lagrange sweep")
        self.L[i] /= pivot
        mask = np.arange(self.p) != i
        self.L[mask] -= np.outer(vals[mask], self.L[i])
        self.log_volume += math.log(abs(pivot))
        return abs(pivot)

    def select(self, db_sites: Sequence[np.ndarray]):
        """Greedy pivoted site selection; center first, database points preferred."""
        pool = [
            np.asarray(s, dtype=float)
            for s in db_sites
            if np.max(np.abs(np.asarray(s) - self.center)) > 1e-12
        ]
        grid = self._candidate_grid()
        self.sites = [self.center.copy()]
        self.pivots = [self._normalize_and_sweep(0, self.center)]
        for i in range(1, self.p):
            value, grad = self._row_value_fn(i)
            site = None
            if pool:
                vals = np.abs(value(np.vstack(pool)))
                best = int(np.argmax(vals))
                if vals[best] >= PIVOT_THRESHOLD:
                    site = pool.pop(best)
            if site is None:
                grid_vals = np.abs(value(grid))
                warm = grid[int(np.argmax(grid_vals))]
                cand, mag = maximize_abs_over_box(
                    value, grad, self.degree, self.lo, self.hi,
                    n_starts=2, seed=self.seed + i, include=warm[None, :],
                    max_iters=50,
                )
                if mag < PIVOT_THRESHOLD:
                    raise DegenerateGeometry(
                        "cannot complete a poised set inside the region"
                    )
                site = cand
            self.sites.append(site)
            self.pivots.append(self._normalize_and_sweep(i, site))

    def _candidate_grid(self) -> np.ndarray:
        pts = self.lo + halton(120, self.n, offset=300 + self.seed) * (self.hi - self.lo)
        if self.n <= 10:
            bits = (
                np.array(np.meshgrid(*[[0, 1]] * self.n, indexing="ij"))
                .reshape(self.n, -1)
                .T
            )
            verts = np.where(bits.astype(bool), self.hi, self.lo)
            pts = np.vstack([pts, verts])
        return pts

    def _polish_rows(self, indices, starts, iters: int = 40):
        """Batched projected ascent of |l_i| for the given rows (both signs).

        One PGD run handles every (row, sign) pair as an independent batch row;
        returns per-index (point, magnitude).
        """
        idx = np.asarray(indices, dtype=int)
        m = idx.size
        rows = self.L[idx]
        quads = [_coeffs_to_quadratic(r, self.n, self.degree) for r in rows]
        G = np.vstack([q[1] for q in quads])
        H = np.stack([q[2] for q in quads]) if self.degree == 2 else None
        signs = np.concatenate([np.ones(m), -np.ones(m)])
        Brows = np.vstack([rows, rows])

        def value(X):
            T = (X - self.center) / self.R
            return signs * np.einsum("ij,ij->i", _basis_eval(T, self.degree), Brows)

        def grad(X):
            T = (X - self.center) / self.R
            Gr = np.vstack([G, G])
            if H is not None:
                HT = np.einsum("kij,kj->ki", np.vstack([H, H]), T)
                Gr = Gr + HT
            return signs[:, None] * Gr / self.R

        X = np.vstack([starts, starts])
        step = np.full(2 * m, 1.0)
        F = value(X)
        for _ in range(iters):
            Gr = grad(X)
            moved = False
            trial = step.copy()
            accept = np.zeros(2 * m, dtype=bool)
            for _bt in range(20):
                cand = np.clip(X + trial[:, None] * Gr, self.lo, self.hi)
                Fc = value(cand)
                dec = np.einsum("ij,ij->i", Gr, cand - X)
                ok = (~accept) & (Fc >= F + 1e-4 * dec) & (Fc > F)
                if np.any(ok):
                    X[ok], F[ok] = cand[ok], Fc[ok]
                    step[ok] = trial[ok] * 2.0
                    accept |= ok
                    moved = True
                if np.all(accept):
                    break
                trial = np.where(accept, trial, trial / 2.0)
            if not moved:
                break
        out = {}
        for pos, i in enumerate(idx):
            pair_vals = np.array([F[pos], F[m + pos]])
            best = int(np.argmax(pair_vals))
            out[int(i)] = (X[best * m + pos].copy(), float(pair_vals[best]))
        return out

    def repair(self, max_swaps: int, db_sites: Optional[Sequence[np.ndarray]] = None) -> tuple[bool, int]:
        """Maximizer-swap repair until max |l_i| <= Lambda everywhere.

        Each sweep bounds all basis polynomials on a fixed candidate grid with
        one matrix product; columns that might exceed Lambda get a batched
        local polish, and the worst offender is swapped. Database points are
        recycled as the swap target whenever they also exceed Lambda (the
        volume still grows by more than Lambda per swap), so repair rarely
        demands fresh expensive evaluations along a well-sampled trajectory.
        """
        grid = self._candidate_grid()
        pool = (
            np.vstack([np.asarray(s, dtype=float) for s in db_sites])
            if db_sites is not None and len(db_sites)
            else np.empty((0, self.n))
        )
        lam_gate = self.lam * (1.0 + 1e-9)
        swaps = 0
        while swaps < max_swaps:
            pts = np.vstack([grid, pool, np.vstack(self.sites)])
            V = np.abs(self.lagrange_values(pts))
            col_max = V.max(axis=0)
            suspects = np.flatnonzero(col_max > 0.8 * self.lam)
            if suspects.size == 0:
                self.certified = True
                return True, swaps
            # hunt among the worst few first; polish the rest only to certify
            order = suspects[np.argsort(-col_max[suspects], kind="stable")]
            worst_i, worst_mag, worst_pt = -1, lam_gate, None
            for tier in (order[:5], order[5:]):
                if tier.size == 0 or worst_i >= 0:
                    continue
                starts = pts[np.argmax(V[:, tier], axis=0)]
                polished = self._polish_rows(tier, starts)
                for i in tier:
                    point, mag = polished[int(i)]
                    if mag > worst_mag:
                        worst_i, worst_mag, worst_pt = int(i), mag, point
            if worst_i < 0:
                self.certified = True
                return True, swaps
            if pool.size:
                db_vals = V[len(grid): len(grid) + len(pool), worst_i]
                cand = int(np.argmax(db_vals))
                if db_vals[cand] > lam_gate and not any(
                    np.max(np.abs(pool[cand] - s)) <= 1e-12 for s in self.sites
                ):
                    worst_pt = pool[cand]
            self.sites[worst_i] = worst_pt
            self.pivots[worst_i] = self._normalize_and_sweep(worst_i, worst_pt)
            swaps += 1
        return False, swaps

    def lagrange_values(self, U) -> np.ndarray:
        T = (np.atleast_2d(np.asarray(U, dtype=float)) - self.center) / self.R
        return _basis_eval(T, self.degree) @ self.L.T

    def fit(self, fvals: np.ndarray) -> PolyModel:
        coeffs = fvals @ self.L
        c0, g, H = _coeffs_to_quadratic(coeffs, self.n, self.degree)
        return PolyModel(
            self.center,
            self.R,
            c0,
            g,
            H,
            self.degree,
            fully_linear=self.certified,
            geometry_score=self.log_volume,
            machine=self,
            training_sites=np.vstack(self.sites),
        )


def _affine_set(db, center, local_scale, box_lo, box_hi):
    """Affinely independent seed set of n+1 points, database points first.

    Returns (sites, pivots). Fresh points walk along directions orthogonal to
    the span so far, projected into the region box; the opposite sign is tried
    before giving up on a direction.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    chosen = [center.copy()]
    pivots = [1.0]
    Q = np.zeros((0, n))

    def residual(v):
        return v - Q.T @ (Q @ v) if Q.shape[0] else v.copy()

    def try_accept(point):
        nonlocal Q
        if any(np.max(np.abs(point - c)) <= 1e-12 for c in chosen):
            return False
        v = (point - center) / local_scale
        r = residual(v)
        nr = float(np.linalg.norm(r))
        if nr < PIVOT_THRESHOLD:
            return False
        chosen.append(point.copy())
        pivots.append(nr)
        Q = np.vstack([Q, r / nr])
        return True

    for site, _ in db.query_ball(center, local_scale):
        if len(chosen) == n + 1:
            break
        try_accept(site)
    while len(chosen) < n + 1:
        proj = np.eye(n) - Q.T @ Q if Q.shape[0] else np.eye(n)
        norms = np.linalg.norm(proj, axis=0)
        placed = False
        for j in np.argsort(-norms, kind="stable"):
            if norms[j] < 1e-12:
                continue
            q = proj[:, j] / norms[j]
            for sign in (1.0, -1.0):
                point = np.clip(center + sign * local_scale * q, box_lo, box_hi)
                if try_accept(point):
                    placed = True
                    break
            if placed:
                break
        if not placed:
            raise DegenerateGeometry(
                "feasible region collapsed onto a lower-dimensional face"
            )
    return chosen, pivots


def build_rbf(
    obj_index: int,
    db: EvaluationDatabase,
    spec: ModelSpec,
    center,
    radius: float,
    delta_ub: float,
    fs: FeasibleSet,
    seed: int = 0,
) -> RBFModel:
    """Select sites, solve the saddle interpolation system, return the model."""
    center = np.asarray(center, dtype=float)
    n = center.size
    R1 = spec.theta1 * radius
    lo1, hi1 = _region_box(center, R1, fs)
    sites, pivots = _affine_set(db, center, R1, lo1, hi1)

    if spec.max_extra_points is not None:
        max_extra = spec.max_extra_points
    else:
        total_cap = (n + 1) * (n + 2) // 2 if n <= 10 else 2 * n + 1
        max_extra = max(0, total_cap - (n + 1))
    extras = []
    for site, _ in db.query_ball(center, spec.theta2 * delta_ub):
        if len(extras) >= max_extra:
            break
        if any(np.max(np.abs(site - s)) <= 1e-12 for s in sites) or any(
            np.max(np.abs(site - s)) <= 1e-12 for s in extras
        ):
            continue
        extras.append(site)

    if spec.kernel == "cubic":
        alpha_user = 1.0
    elif spec.shape_mode == "adaptive":
        alpha_user = adaptive_shape(radius, spec.c_alpha, spec.alpha_lo, spec.alpha_hi)
    else:
        alpha_user = spec.alpha
    alpha_local = alpha_user * R1

    def assemble(all_sites):
        fvals = np.array([db.evaluate_scaled(s)[obj_index] for s in all_sites])
        T = (np.vstack(all_sites) - center) / R1
        N = len(all_sites)
        r = np.sqrt(
            np.maximum(
                np.sum((T[:, None, :] - T[None, :, :]) ** 2, axis=2), 0.0
            )
        )
        Phi = kernel_value(spec.kernel, r, alpha_local)
        p = 1 + (n if spec.tail_degree == 1 else 0)
        P = np.ones((p, N))
        if spec.tail_degree == 1:
            P[1:, :] = T.T
        M = np.zeros((N + p, N + p))
        M[:N, :N] = Phi
        M[:N, N:] = P.T
        M[N:, :N] = P
        rhs = np.concatenate([fvals, np.zeros(p)])
        sol = solve_linear(M, rhs)
        return T, sol[:N], sol[N:]

    try:
        T, coeffs, lam = assemble(sites + extras)
        used = sites + extras
    except SingularMatrix:
        T, coeffs, lam = assemble(sites)  # extras made the system degenerate
        used = sites
    tail_c0 = float(lam[0])
    tail_g = lam[1:] if spec.tail_degree == 1 else np.zeros(n)
    return RBFModel(
        center,
        R1,
        T,
        coeffs,
        tail_c0,
        tail_g,
        spec.kernel,
        alpha_local,
        alpha_user,
        fully_linear=True,
        geometry_score=float(np.log(np.maximum(pivots, 1e-300)).sum()),
        training_sites=np.vstack(used),
    )


_STENCIL_MIN_OFFSET = 1e-8


def _stencil_sites(center, local_scale, lo, hi):
    """Canonical {0, +e_i, -e_i, e_i + e_j} quadratic design fitted to the box."""
    center = np.asarray(center, dtype=float)
    n = center.size
    up = np.minimum(local_scale, hi - center)
    dn = np.minimum(local_scale, center - lo)
    first = np.empty(n)
    second = np.empty(n)
    for i in range(n):
        if up[i] >= _STENCIL_MIN_OFFSET and dn[i] >= _STENCIL_MIN_OFFSET:
            first[i], second[i] = up[i], -dn[i]
        elif up[i] >= _STENCIL_MIN_OFFSET:
            first[i], second[i] = up[i], up[i] / 2.0
        elif dn[i] >= _STENCIL_MIN_OFFSET:
            first[i], second[i] = -dn[i], -dn[i] / 2.0
        else:
            raise DegenerateGeometry("region box is flat along a coordinate")
    sites = [center.copy()]
    for i in range(n):
        for off in (first[i], second[i]):
            pt = center.copy()
            pt[i] += off
            sites.append(pt)
    major = np.where(np.abs(first) >= np.abs(second), first, second)
    for i in range(n):
        for j in range(i + 1, n):
            pt = center.copy()
            pt[i] += major[i]
            pt[j] += major[j]
            sites.append(pt)
    return sites


def build_lagrange(
    obj_index: int,
    db: EvaluationDatabase,
    spec: ModelSpec,
    center,
    radius: float,
    fs: FeasibleSet,
    seed: int = 0,
    max_repair: Optional[int] = None,
) -> PolyModel:
    """Poised-set Lagrange model with Lambda-poisedness repair.

    Degree-2 builds with n >= 6 use the precomputed finite-difference stencil
    fitted into the region (the repair loop is skipped); smaller problems run
    greedy pivoting plus repair with a 10p swap cap.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    R1 = spec.theta1 * radius
    lo1, hi1 = _region_box(center, R1, fs)
    p = poly_basis_size(n, spec.degree)

    if spec.degree == 2 and n >= 6:
        try:
            sites = _stencil_sites(center, R1, lo1, hi1)
            T = (np.vstack(sites) - center) / R1
            M = _basis_eval(T, 2)
            fvals = np.array([db.evaluate_scaled(s)[obj_index] for s in sites])
            coeffs = solve_linear(M, fvals)
            c0, g, H = _coeffs_to_quadratic(coeffs, n, 2)
            return PolyModel(
                center, R1, c0, g, H, 2,
                fully_linear=True,
                geometry_score=0.0,
                training_sites=np.vstack(sites),
            )
        except SingularMatrix:
            pass  # fall through to the pivoting path

    machine = _LagrangeMachine(n, spec.degree, center, R1, lo1, hi1, spec.lambda_poised, seed)
    region_sites = [s for s, _ in db.query_ball(center, R1)]
    machine.select(region_sites)
    cap = 10 * p if max_repair is None else max_repair
    machine.repair(cap, db_sites=region_sites)
    fvals = np.array([db.evaluate_scaled(s)[obj_index] for s in machine.sites])
    return machine.fit(fvals)


def build_taylor_fd(
    obj_index: int,
    db: EvaluationDatabase,
    spec: ModelSpec,
    center,
    radius: float,
    fs: FeasibleSet,
) -> PolyModel:
    """Linear Taylor model from central differences; one-sided at box faces."""
    center = np.asarray(center, dtype=float)
    n = center.size
    h = spec.fd_step * max(radius, 1e-8)
    fss = fs
    lo = fss.lower if fss.is_box else np.full(n, -np.inf)
    hi = fss.upper if fss.is_box else np.full(n, np.inf)
    f0 = float(db.evaluate_scaled(center)[obj_index])
    sites = [center.copy()]

    def scalar(u):
        u = np.asarray(u, dtype=float)
        sites.append(u.copy())
        return float(db.evaluate_scaled(u)[obj_index])

    g = fd_gradient(scalar, center, h, lo, hi)
    return PolyModel(
        center, 1.0, f0, g, np.zeros((n, n)), 1,
        fully_linear=True,
        geometry_score=0.0,
        training_sites=np.vstack(sites),
        kind="taylor-fd1",
    )


@dataclass
class SurrogateBundle:
    """k model functions valid on one trust region, plus certificates."""

    models: list
    fully_linear: bool
    hessian_bound: float
    center: np.ndarray
    radius: float
    training_sites: np.ndarray
    new_sites: int
    k: int = field(default=0)

    def __post_init__(self):
        self.k = len(self.models)

    def values(self, u) -> np.ndarray:
        return np.array([m.value(u) for m in self.models])

    def values_many(self, U) -> np.ndarray:
        return np.column_stack([m.values(U) for m in self.models])

    def gradients(self, u) -> np.ndarray:
        return np.vstack([m.gradient(u) for m in self.models])

    def phi(self, u) -> float:
        return float(np.max(self.values(u)))

    def phi_many(self, U) -> np.ndarray:
        return np.max(self.values_many(U), axis=1)


def hessian_bound(models, center, radius, fs: FeasibleSet, c: float, seed: int = 0) -> float:
    """Max sampled/exact Frobenius Hessian norm over the region, floored and
    clamped so that c * H > 1 always holds."""
    lo, hi = _region_box(np.asarray(center, dtype=float), radius, fs)
    worst = 1e-8
    for model in models:
        extra = model.training_sites if len(model.training_sites) else None
        worst = max(worst, model.hessian_norm_bound(lo, hi, extra, seed))
    return float(max(worst, 1.01 / c))


def _normalize_specs(specs, prob: MOProblem) -> list[Optional[ModelSpec]]:
    if isinstance(specs, ModelSpec) or specs is None:
        specs = [specs] * prob.n_objs
    if len(specs) != prob.n_objs:
        raise DimensionMismatch("need one ModelSpec per objective")
    out = []
    for idx, spec in enumerate(specs):
        if prob.expensive_mask[idx]:
            if spec is None:
                raise ValueError(f"objective {idx} is expensive and needs a ModelSpec")
            if spec.kind == "exact-cheap":
                raise ValueError("exact-cheap cannot model an expensive objective")
        out.append(spec)
    return out


def build_bundle(
    prob: MOProblem,
    db: EvaluationDatabase,
    specs,
    center,
    radius: float,
    delta_ub: float,
    seed: int = 0,
) -> SurrogateBundle:
    """Construct the per-objective surrogates on B(center; radius).

    Cheap objectives are wrapped exactly; expensive ones dispatch on their
    ModelSpec. Expensive evaluations stay inside X intersect the
    theta2-enlarged region and are all routed through the database.
    """
    center = np.asarray(center, dtype=float)
    fs = prob.feasible.scaled()
    specs = _normalize_specs(specs, prob)
    before = len(db)
    models = []
    for idx in range(prob.n_objs):
        if not prob.expensive_mask[idx]:
            models.append(ExactCheapModel(prob, idx))
            continue
        spec = specs[idx]
        if spec.kind == "rbf":
            models.append(build_rbf(idx, db, spec, center, radius, delta_ub, fs, seed))
        elif spec.kind == "lagrange":
            models.append(build_lagrange(idx, db, spec, center, radius, fs, seed))
        elif spec.kind == "taylor-fd1":
            models.append(build_taylor_fd(idx, db, spec, center, radius, fs))
        else:
            raise ValueError(f"cannot build kind {spec.kind!r} for an expensive objective")
    sites = [m.training_sites for m in models if len(m.training_sites)]
    return SurrogateBundle(
        models=models,
        fully_linear=all(m.fully_linear for m in models),
        hessian_bound=hessian_bound(models, center, radius, fs, c=prob.n_objs, seed=seed),
        center=center,
        radius=radius,
        training_sites=np.vstack(sites) if sites else np.empty((0, prob.n_vars)),
        new_sites=len(db) - before,
    )


IMPROVEMENT_CAP_FACTOR = 3  # M = 3 (n + 1) repair actions per objective


def improve_model(
    bundle: SurrogateBundle,
    prob: MOProblem,
    db: EvaluationDatabase,
    specs,
    delta_ub: float,
    seed: int = 0,
) -> SurrogateBundle:
    """One bounded repair pass on a not-fully-linear bundle.

    Lagrange models continue their Lambda repair (the log-volume score strictly
    increases per swap); anything else is rebuilt certified. Raises ValueError
    if the bundle is already fully linear (caller contract).
    """
    if bundle.fully_linear:
        raise ValueError("bundle is already fully linear")
    fs = prob.feasible.scaled()
    specs = _normalize_specs(specs, prob)
    cap = IMPROVEMENT_CAP_FACTOR * (prob.n_vars + 1)
    before = len(db)
    models = []
    for idx, model in enumerate(bundle.models):
        if model.fully_linear:
            models.append(model)
            continue
        machine = getattr(model, "machine", None)
        if machine is not None:
            machine.repair(cap)
            fvals = np.array([db.evaluate_scaled(s)[idx] for s in machine.sites])
            models.append(machine.fit(fvals))
        else:
            spec = specs[idx]
            if spec.kind == "rbf":
                models.append(
                    build_rbf(idx, db, spec, bundle.center, bundle.radius, delta_ub, fs, seed)
                )
            else:
                models.append(
                    build_lagrange(idx, db, spec, bundle.center, bundle.radius, fs, seed)
                )
    sites = [m.training_sites for m in models if len(m.training_sites)]
    return SurrogateBundle(
        models=models,
        fully_linear=all(m.fully_linear for m in models),
        hessian_bound=hessian_bound(
            models, bundle.center, bundle.radius, fs, c=prob.n_objs, seed=seed
        ),
        center=bundle.center,
        radius=bundle.radius,
        training_sites=np.vstack(sites) if sites else np.empty((0, prob.n_vars)),
        new_sites=bundle.new_sites + (len(db) - before),
    )
