"""Trial-step computation inside the trust region.

All variants return a StepResult whose certificate triple (kappa, lhs, rhs)
witnesses the sufficient decrease in standard form:

    Phi_m(x) - Phi_m(x + s) >= kappa * w~ * min(w~ / (c H), Delta),

with kappa = min(2 b (1 - a), a), w~ the clamped model criticality, c the
number of objectives (inf-norm choice) and H the bundle's Hessian bound.
The Pascoletti-Serafini step falls back to the strict Pareto-Cauchy step when
its subsolver does not reach that bound, so the certificate holds regardless
of subsolver quality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .criticality import CriticalityResult
from .errors import BacktrackExhausted, ZeroDirection
from .linalg import box_multistart_minimize
from .problem import FeasibleSet, project_to_box
from .surrogates import SurrogateBundle

STEP_METHODS = ("modified-pc", "strict-pc", "pascoletti-serafini", "exact-pc")


@dataclass(frozen=True)
class StepConfig:
    method: str = "strict-pc"
    armijo_a: float = 0.1
    armijo_b: float = 0.5
    max_backtracks: int = 30
    ps_starts: int = 0  # 0 = 10 + n
    grid_points: int = 64

    def __post_init__(self):
        if self.method not in STEP_METHODS:
            raise ValueError(f"unknown step method {self.method!r}")
        if not (0.0 < self.armijo_a < 1.0 and 0.0 < self.armijo_b < 1.0):
            raise ValueError("Armijo constants must be strictly inside (0, 1)")


@dataclass
class StepResult:
    step: np.ndarray
    trial: np.ndarray
    model_decrease: float
    per_objective_decrease: np.ndarray
    backtracks: int
    kappa: float
    certificate_lhs: float
    certificate_rhs: float
    tau: Optional[float] = None
    r_ratio: Optional[float] = None
    fallback: bool = False

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.step == 0.0))


def sufficient_decrease_kappa(a: float, b: float) -> float:
    return min(2.0 * b * (1.0 - a), a)


def certificate_rhs(crit: CriticalityResult, bundle: SurrogateBundle, radius: float, cfg: StepConfig) -> float:
    kappa = sufficient_decrease_kappa(cfg.armijo_a, cfg.armijo_b)
    wt = crit.omega_clamped
    return kappa * wt * min(wt / (bundle.k * bundle.hessian_bound), radius)


def zero_step(bundle: SurrogateBundle, center, cfg: StepConfig) -> StepResult:
    center = np.asarray(center, dtype=float)
    k = bundle.k
    return StepResult(
        step=np.zeros_like(center),
        trial=center.copy(),
        model_decrease=0.0,
        per_objective_decrease=np.zeros(k),
        backtracks=0,
        kappa=sufficient_decrease_kappa(cfg.armijo_a, cfg.armijo_b),
        certificate_lhs=0.0,
        certificate_rhs=0.0,
    )


def bar_sigma(d, radius: float) -> float:
    """Step-length cap along d: min(Delta, |d|) in the short/small regime, else Delta."""
    nd = float(np.max(np.abs(np.asarray(d, dtype=float))))
    if nd == 0.0:
        raise ZeroDirection("bar_sigma needs a nonzero direction")
    if nd < 1.0 or radius <= 1.0:
        return min(radius, nd)
    return radius


def _backtrack(
    bundle: SurrogateBundle,
    center: np.ndarray,
    radius: float,
    crit: CriticalityResult,
    cfg: StepConfig,
    fs: FeasibleSet,
    strict: bool,
) -> StepResult:
    if crit.omega <= 0.0:
        raise ValueError("backtracking requires a non-critical center (omega > 0)")
    d = crit.direction
    nd = float(np.max(np.abs(d)))
    if nd == 0.0:
        raise ZeroDirection("descent direction is zero")
    sigma = bar_sigma(d, radius)
    if fs.is_box:
        # keep x + t d inside X by convexity: t <= 1 along the LP direction
        sigma = min(sigma, nd)
    unit = d / nd
    m_center = bundle.values(center)
    phi_center = float(np.max(m_center))
    for j in range(cfg.max_backtracks + 1):
        t = (cfg.armijo_b**j) * sigma
        trial = project_to_box(center + t * unit, fs)
        m_trial = bundle.values(trial)
        quantum = cfg.armijo_a * t * crit.omega / nd
        if strict:
            ok = float(np.min(m_center - m_trial)) >= quantum
        else:
            ok = float(np.max(m_trial)) <= phi_center - quantum
        if ok:
            lhs = phi_center - float(np.max(m_trial))
            return StepResult(
                step=trial - center,
                trial=trial,
                model_decrease=lhs,
                per_objective_decrease=m_center - m_trial,
                backtracks=j,
                kappa=sufficient_decrease_kappa(cfg.armijo_a, cfg.armijo_b),
                certificate_lhs=lhs,
                certificate_rhs=certificate_rhs(crit, bundle, radius, cfg),
            )
    raise BacktrackExhausted(f"no Armijo step within {cfg.max_backtracks} halvings")


def modified_pareto_cauchy(bundle, center, radius, crit, cfg, fs) -> StepResult:
    """Armijo-backtracked step along the model steepest-descent direction."""
    return _backtrack(bundle, np.asarray(center, dtype=float), radius, crit, cfg, fs, strict=False)


def strict_pareto_cauchy(bundle, center, radius, crit, cfg, fs) -> StepResult:
    """Backtracked step where every objective model drops by the Armijo quantum."""
    return _backtrack(bundle, np.asarray(center, dtype=float), radius, crit, cfg, fs, strict=True)


def _sigma_box_exit(center, d, fs: FeasibleSet) -> float:
    if not fs.is_box:
        return np.inf
    out = np.inf
    for i in range(center.size):
        if d[i] > 0:
            out = min(out, (fs.upper[i] - center[i]) / d[i])
        elif d[i] < 0:
            out = min(out, (fs.lower[i] - center[i]) / d[i])
    return out


def exact_pareto_cauchy(
    bundle, center, radius, crit, fs, grid_points: int = 64, cfg: Optional[StepConfig] = None
) -> StepResult:
    """Best point along the steepest-descent ray: grid + golden-section refine."""
    cfg = cfg or StepConfig()
    center = np.asarray(center, dtype=float)
    if crit.omega <= 0.0:
        raise ValueError("exact Pareto-Cauchy step requires omega > 0")
    d = crit.direction
    nd = float(np.max(np.abs(d)))
    sigma_max = min(radius / nd, _sigma_box_exit(center, d, fs))
    sigmas = np.linspace(0.0, sigma_max, grid_points)
    pts = center[None, :] + sigmas[:, None] * d[None, :]
    phis = bundle.phi_many(pts)
    best = int(np.argmin(phis))
    lo = sigmas[max(best - 1, 0)]
    hi = sigmas[min(best + 1, grid_points - 1)]
    gold = 0.5 * (np.sqrt(5.0) - 1.0)
    a_, b_ = lo, hi
    c_ = b_ - gold * (b_ - a_)
    d_ = a_ + gold * (b_ - a_)
    fc = bundle.phi(center + c_ * d)
    fd = bundle.phi(center + d_ * d)
    tol = 1e-8 * max(radius, 1e-12) / nd
    while (b_ - a_) > tol:
        if fc <= fd:
            b_, d_, fd = d_, c_, fc
            c_ = b_ - gold * (b_ - a_)
            fc = bundle.phi(center + c_ * d)
        else:
            a_, c_, fc = c_, d_, fd
            d_ = a_ + gold * (b_ - a_)
            fd = bundle.phi(center + d_ * d)
    sigma = 0.5 * (a_ + b_)
    cands = [0.0, sigmas[best], sigma]
    vals = [bundle.phi(center + s * d) for s in cands]
    sigma = cands[int(np.argmin(vals))]
    trial = project_to_box(center + sigma * d, fs)
    m_center = bundle.values(center)
    m_trial = bundle.values(trial)
    lhs = float(np.max(m_center) - np.max(m_trial))
    return StepResult(
        step=trial - center,
        trial=trial,
        model_decrease=lhs,
        per_objective_decrease=m_center - m_trial,
        backtracks=0,
        kappa=sufficient_decrease_kappa(cfg.armijo_a, cfg.armijo_b),
        certificate_lhs=lhs,
        certificate_rhs=certificate_rhs(crit, bundle, radius, cfg),
    )


def local_ideal_point(bundle, center, radius, fs: FeasibleSet, starts: int = 0) -> np.ndarray:
    """Componentwise minimum of each model over the trust region (not all of X)."""
    center = np.asarray(center, dtype=float)
    n = center.size
    starts = starts or (10 + n)
    lo = center - radius
    hi = center + radius
    if fs.is_box:
        lo = np.maximum(lo, fs.lower)
        hi = np.minimum(hi, fs.upper)
    ideal = np.empty(bundle.k)
    for idx, model in enumerate(bundle.models):
        _, val = box_multistart_minimize(
            model.values, model.gradients, lo, hi,
            n_starts=starts, seed=idx, max_iters=150, include=center[None, :],
        )
        ideal[idx] = min(val, model.value(center))
    return ideal


def pascoletti_serafini(bundle, center, radius, crit, fs, cfg: StepConfig) -> StepResult:
    """Scalarized trial step toward the local model ideal point.

    Minimizes max_l (m_l(x) - m_l(center)) / r_l over the region via annealed
    log-sum-exp smoothing; degenerate r (model-critical center) returns the
    zero step, and a trial below the standard-form bound is replaced by the
    strict Pareto-Cauchy step.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    ideal = local_ideal_point(bundle, center, radius, fs, cfg.ps_starts)
    m_center = bundle.values(center)
    r = np.maximum(m_center - ideal, 0.0)
    r_max = float(np.max(r))
    if r_max <= 1e-12:
        res = zero_step(bundle, center, cfg)
        res.tau = 0.0
        res.r_ratio = None
        return res
    r_ratio = float(np.min(r) / r_max)
    r_safe = np.maximum(r, 1e-9 * r_max)

    lo = center - radius
    hi = center + radius
    if fs.is_box:
        lo = np.maximum(lo, fs.lower)
        hi = np.minimum(hi, fs.upper)

    def ratios(U):
        return (bundle.values_many(U) - m_center[None, :]) / r_safe[None, :]

    def make_smooth(temp):
        def value(U):
            Q = ratios(U)
            mx = np.max(Q, axis=1)
            return mx + temp * np.log(np.sum(np.exp((Q - mx[:, None]) / temp), axis=1))

        def grad(U):
            U = np.atleast_2d(U)
            Q = ratios(U)
            mx = np.max(Q, axis=1)
            W = np.exp((Q - mx[:, None]) / temp)
            W /= np.sum(W, axis=1, keepdims=True)
            out = np.zeros_like(U)
            for idx, model in enumerate(bundle.models):
                out += (W[:, idx] / r_safe[idx])[:, None] * model.gradients(U)
            return out

        return value, grad

    starts = cfg.ps_starts or (10 + n)
    v1, g1 = make_smooth(1e-2)
    x_best, _ = box_multistart_minimize(
        v1, g1, lo, hi, n_starts=starts, seed=7, max_iters=150, include=center[None, :]
    )
    v2, g2 = make_smooth(1e-4)
    x_best, _ = box_multistart_minimize(
        v2, g2, lo, hi, n_starts=1, seed=8, max_iters=150, include=x_best[None, :]
    )
    trial = project_to_box(x_best, fs)
    m_trial = bundle.values(trial)
    tau = float(np.max((m_trial - m_center) / r_safe))
    lhs = float(np.max(m_center) - np.max(m_trial))
    rhs = certificate_rhs(crit, bundle, radius, cfg)
    if lhs < rhs and crit.omega > 0.0:
        res = strict_pareto_cauchy(bundle, center, radius, crit, cfg, fs)
        res.tau = tau
        res.r_ratio = r_ratio
        res.fallback = True
        return res
    return StepResult(
        step=trial - center,
        trial=trial,
        model_decrease=lhs,
        per_objective_decrease=m_center - m_trial,
        backtracks=0,
        kappa=sufficient_decrease_kappa(cfg.armijo_a, cfg.armijo_b),
        certificate_lhs=lhs,
        certificate_rhs=rhs,
        tau=tau,
        r_ratio=r_ratio,
    )


def compute_step(bundle, center, radius, crit, cfg: StepConfig, fs: FeasibleSet) -> StepResult:
    """Dispatch on cfg.method."""
    if cfg.method == "modified-pc":
        return modified_pareto_cauchy(bundle, center, radius, crit, cfg, fs)
    if cfg.method == "strict-pc":
        return strict_pareto_cauchy(bundle, center, radius, crit, cfg, fs)
    if cfg.method == "exact-pc":
        return exact_pareto_cauchy(bundle, center, radius, crit, fs, cfg.grid_points, cfg)
    return pascoletti_serafini(bundle, center, radius, crit, fs, cfg)
