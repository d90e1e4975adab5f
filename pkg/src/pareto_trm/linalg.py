"""Dense numerical kernels.

Everything here is deterministic: the simplex uses Bland's rule, all sampling
is Halton-based, and no global RNG state is touched. These routines are pure
functions of their inputs and safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, LPFailure, SingularMatrix

_PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149,
    151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
)


def _radical_inverse(i: int, base: int) -> float:
    inv, denom = 0.0, 1.0
    while i > 0:
        i, digit = divmod(i, base)
        denom *= base
        inv += digit / denom
    return inv


def halton(count: int, dim: int, offset: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy points in (0,1)^dim, shifted by `offset`."""
    if dim > len(_PRIMES):
        raise DimensionMismatch(f"halton supports dim <= {len(_PRIMES)}")
    out = np.empty((count, dim))
    for j in range(dim):
        base = _PRIMES[j]
        out[:, j] = [_radical_inverse(offset + i + 1, base) for i in range(count)]
    return out


def fd_gradient(fn, z, h, lo, hi, counter: Optional[dict] = None) -> np.ndarray:
    """Central-difference gradient with one-sided stencils at active box faces.

    fn is a scalar function of one point; stencil points are clipped into
    [lo, hi] so hard constraints are never violated.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    g = np.empty(n)
    f0 = None

    def tick(k: int):
        if counter is not None:
            counter["evals"] = counter.get("evals", 0) + k

    for i in range(n):
        up = min(z[i] + h, hi[i])
        dn = max(z[i] - h, lo[i])
        if up - dn <= 0:
            g[i] = 0.0
            continue
        zp, zm = z.copy(), z.copy()
        zp[i], zm[i] = up, dn
        if up > z[i] and dn < z[i]:
            g[i] = (fn(zp) - fn(zm)) / (up - dn)
            tick(2)
        else:
            if f0 is None:
                f0 = fn(z)
                tick(1)
            other = zp if up > z[i] else zm
            g[i] = (fn(other) - f0) / (other[i] - z[i])
            tick(1)
    return g


def solve_linear(A, b) -> np.ndarray:
    """Solve Ax = b by Gaussian elimination with partial pivoting."""
    A = np.array(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch("A must be square")
    n = A.shape[0]
    if b.shape != (n,):
        raise DimensionMismatch("b length must match A")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("entries must be finite")
    M = np.hstack([A, b[:, None]])
    piv_floor = 1e-12 * np.max(np.abs(A), initial=0.0)
    for col in range(n):
        p = col + int(np.argmax(np.abs(M[col:, col])))
        if np.abs(M[p, col]) <= piv_floor:
            raise SingularMatrix(f"pivot {M[p, col]!r} below threshold in column {col}")
        if p != col:
            M[[col, p]] = M[[p, col]]
        factors = M[col + 1:, col] / M[col, col]
        M[col + 1:, col:] -= factors[:, None] * M[col, col:]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (M[i, n] - M[i, i + 1: n] @ x[i + 1:]) / M[i, i]
    return x


@dataclass(frozen=True)
class LPProblem:
    """min beta s.t. g_l . d <= beta for all l, box_lo <= d <= box_hi.

    The box is the intersection of the unit inf-norm ball with the shifted
    feasible set, so 0 is always feasible and |d_i| <= 1.
    """

    gradients: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.gradients, dtype=float))
        lo = np.asarray(self.box_lo, dtype=float)
        hi = np.asarray(self.box_hi, dtype=float)
        if lo.shape != hi.shape or G.shape[1] != lo.size:
            raise DimensionMismatch("gradient/box shapes disagree")
        if not np.all(np.isfinite(G)):
            raise ValueError("gradients must be finite")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("d = 0 must be feasible (box_lo <= 0 <= box_hi)")
        if np.any(lo < -1 - 1e-12) or np.any(hi > 1 + 1e-12):
            raise ValueError("box must lie inside the unit ball")
        object.__setattr__(self, "gradients", G)
        object.__setattr__(self, "box_lo", np.clip(lo, -1.0, 0.0))
        object.__setattr__(self, "box_hi", np.clip(hi, 0.0, 1.0))


def solve_descent_lp(lp: LPProblem) -> tuple[np.ndarray, float]:
    """Bounded-variable simplex with Bland's rule; returns (d, beta), beta <= 0.

    Variables are split d = dp - dm with dp, dm >= 0 and beta = -bt with
    bt in [0, B], so the initial all-zero point is basic feasible with the
    slack basis. Bland's pivoting makes the output deterministic.
    """
    G, lo, hi = lp.gradients, lp.box_lo, lp.box_hi
    k, n = G.shape
    nv = 2 * n + 1 + k  # dp, dm, bt, slacks
    big = max(1.0, float(np.abs(G).sum(axis=1).max()) + 1.0)
    upper = np.concatenate([hi, -lo, [big], np.full(k, np.inf)])
    cost = np.zeros(nv)
    cost[2 * n] = -1.0
    A = np.zeros((k, nv))
    A[:, :n] = G
    A[:, n: 2 * n] = -G
    A[:, 2 * n] = 1.0
    A[:, 2 * n + 1:] = np.eye(k)

    basis = list(range(2 * n + 1, nv))
    at_upper = np.zeros(nv, dtype=bool)  # nonbasic status; basics ignored
    in_basis = np.zeros(nv, dtype=bool)
    in_basis[basis] = True

    tol = 1e-11 * max(1.0, float(np.abs(G).max(initial=0.0)))

    def basic_values() -> np.ndarray:
        xn = np.where(at_upper, upper, 0.0)
        xn[in_basis] = 0.0
        rhs = -A @ xn
        return solve_linear(A[:, basis], rhs)

    max_pivots = 500 + 50 * nv
    for _ in range(max_pivots):
        xb = basic_values()
        try:
            pi = solve_linear(A[:, basis].T, cost[basis])
        except SingularMatrix as exc:  # basis is nonsingular by construction
            raise LPFailure(f"singular basis: {exc}") from exc
        entering = -1
        for j in range(nv):
            if in_basis[j] or upper[j] <= tol:
                continue
            red = cost[j] - pi @ A[:, j]
            if (not at_upper[j] and red < -tol) or (at_upper[j] and red > tol):
                entering = j
                break
        if entering < 0:
            x = np.where(at_upper, upper, 0.0)
            x[in_basis] = 0.0
            x[basis] = xb
            d = x[:n] - x[n: 2 * n]
            return d, -float(x[2 * n])
        delta = -1.0 if at_upper[entering] else 1.0
        w = solve_linear(A[:, basis], A[:, entering])
        t_best, leave_pos, leave_to_upper = np.inf, -1, False
        for i, bi in enumerate(basis):
            dw = delta * w[i]
            if dw > tol:
                t = max(xb[i], 0.0) / dw  # basic variable drops to 0
                hit_upper = False
            elif dw < -tol and np.isfinite(upper[bi]):
                t = max(upper[bi] - xb[i], 0.0) / (-dw)  # basic rises to its cap
                hit_upper = True
            else:
                continue
            # smaller ratio wins; ties go to the smallest variable index (Bland)
            if t < t_best - 1e-13 or (
                t <= t_best + 1e-13 and leave_pos >= 0 and bi < basis[leave_pos]
            ):
                t_best, leave_pos, leave_to_upper = min(t, t_best), i, hit_upper
        if upper[entering] < t_best - 1e-13:
            # entering variable reaches its opposite bound first: flip, no pivot
            at_upper[entering] = not at_upper[entering]
            continue
        if leave_pos < 0:
            if not np.isfinite(upper[entering]):
                raise LPFailure("unbounded direction encountered")
            at_upper[entering] = not at_upper[entering]
            continue
        leaving = basis[leave_pos]
        basis[leave_pos] = entering
        in_basis[entering] = True
        in_basis[leaving] = False
        at_upper[leaving] = leave_to_upper
        at_upper[entering] = False
    raise LPFailure("simplex iteration cap reached")


def box_multistart_minimize(
    value_fn: Callable[[np.ndarray], np.ndarray],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    n_starts: int = 10,
    seed: int = 0,
    max_iters: int = 200,
    gtol: float = 1e-10,
    include: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, float]:
    """Projected-gradient descent with Armijo backtracking from Halton starts.

    value_fn / grad_fn must accept batches: (m, n) -> (m,) and (m, n) -> (m, n).
    Deterministic for fixed inputs; per-run objective sequences are
    non-increasing. Returns the best point found and its value.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    X = lo + halton(max(1, n_starts), n, offset=1000 * seed) * (hi - lo)
    if include is not None:
        extra = np.atleast_2d(np.asarray(include, dtype=float))
        X = np.vstack([np.clip(extra, lo, hi), X])
    F = value_fn(X)
    step = np.ones(X.shape[0])
    for _ in range(max_iters):
        Gr = grad_fn(X)
        moved = False
        trial_step = step.copy()
        Xn, Fn = X, F
        accept = np.zeros(X.shape[0], dtype=bool)
        for _bt in range(40):
            cand = np.clip(X - trial_step[:, None] * Gr, lo, hi)
            Fc = value_fn(cand)
            decrease = np.einsum("ij,ij->i", Gr, X - cand)
            ok = (~accept) & (Fc <= F - 1e-4 * decrease)
            if np.any(ok):
                if not moved:
                    Xn, Fn = X.copy(), F.copy()
                    moved = True
                Xn[ok], Fn[ok] = cand[ok], Fc[ok]
                step[ok] = trial_step[ok] * 2.0
                accept |= ok
            if np.all(accept):
                break
            trial_step = np.where(accept, trial_step, trial_step / 2.0)
        if not moved:
            break
        X, F = Xn, Fn
        proj_grad = np.max(np.abs(X - np.clip(X - grad_fn(X), lo, hi)), axis=1)
        if np.all(proj_grad <= gtol):
            break
    best = int(np.argmin(F))
    return X[best].copy(), float(F[best])


def maximize_abs_over_box(
    value_fn: Callable[[np.ndarray], np.ndarray],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    degree: int,
    lo,
    hi,
    n_starts: int = 12,
    seed: int = 0,
    include: Optional[np.ndarray] = None,
    max_iters: int = 120,
) -> tuple[np.ndarray, float]:
    """Approximate argmax of |p| over a box for a polynomial of degree <= 2.

    Degree <= 1 with n <= 16 is exact (vertex enumeration); otherwise the best
    of multistart descent on +p and -p is returned.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    if degree <= 1 and n <= 16:
        bits = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
        verts = np.where(bits.astype(bool), hi, lo)
        vals = value_fn(verts)
        best = int(np.argmax(np.abs(vals)))
        return verts[best].copy(), float(abs(vals[best]))
    x_lo, v_lo = box_multistart_minimize(
        value_fn, grad_fn, lo, hi, n_starts, seed, max_iters=max_iters, include=include
    )
    neg_val = lambda X: -value_fn(X)
    neg_grad = lambda X: -grad_fn(X)
    x_hi, v_hi = box_multistart_minimize(
        neg_val, neg_grad, lo, hi, n_starts, seed, max_iters=max_iters, include=include
    )
    if abs(v_lo) >= abs(v_hi):
        return x_lo, float(abs(v_lo))
    return x_hi, float(abs(v_hi))
