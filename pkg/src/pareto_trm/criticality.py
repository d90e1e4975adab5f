"""The multiobjective criticality measure: steepest-descent LP value and clamp.

omega(x) is the negative optimal value of the descent LP built from the
objective (or surrogate) gradients at x; it vanishes exactly at Pareto-critical
points. omega_clamped = min(omega, 1) is the variant the trust-region control
logic uses. Diagnostics on true objectives work in the optimizer's scaled
coordinates so that values line up with the internal stopping tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ObjectiveFailure
from .linalg import LPProblem, fd_gradient, solve_descent_lp
from .problem import FeasibleSet, MOProblem, project_to_box


@dataclass(frozen=True)
class CriticalityResult:
    direction: np.ndarray
    omega: float
    omega_clamped: float


def omega_of_gradients(gradients, x, fs: FeasibleSet) -> CriticalityResult:
    """Solve the descent LP for the given gradient rows at x.

    The direction box is the intersection of the unit inf-ball with the
    shifted feasible set: max(-1, lower - x) <= d <= min(1, upper - x).
    """
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    x = project_to_box(np.asarray(x, dtype=float), fs)
    n = x.size
    if fs.is_box:
        lo = np.maximum(-1.0, fs.lower - x)
        hi = np.minimum(1.0, fs.upper - x)
    else:
        lo, hi = -np.ones(n), np.ones(n)
    d, beta = solve_descent_lp(LPProblem(G, lo, hi))
    omega = -beta
    return CriticalityResult(d, omega, min(omega, 1.0))


def true_omega(
    prob: MOProblem, x, fd_step: float = 1e-6, counter: dict | None = None
) -> CriticalityResult:
    """Criticality of the true objectives at x (given in original coordinates).

    Gradients come from the problem's callbacks where available, otherwise
    from central finite differences with step fd_step in scaled coordinates.
    Evaluations bypass the database (diagnostic use only).
    """
    x = np.asarray(x, dtype=float)
    fs = prob.feasible
    fss = fs.scaled()
    z = prob.scale(x)
    width = fs.width() if fs.is_box else None
    lo = fss.lower if fss.is_box else np.full(prob.n_vars, -np.inf)
    hi = fss.upper if fss.is_box else np.full(prob.n_vars, np.inf)
    G = np.empty((prob.n_objs, prob.n_vars))
    for idx in range(prob.n_objs):
        cb = prob.gradient_callbacks[idx]
        if cb is not None:
            gx = np.asarray(cb(x), dtype=float)
            G[idx] = gx * width if width is not None else gx
        else:
            fn = prob.objectives[idx]
            scalar = (lambda f: (lambda zz: float(f(prob.unscale(zz)))))(fn)
            G[idx] = fd_gradient(scalar, z, fd_step, lo, hi, counter)
    if not np.all(np.isfinite(G)):
        raise ObjectiveFailure("non-finite finite-difference gradient", site=x)
    return omega_of_gradients(G, z, fss)
