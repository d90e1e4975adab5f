import numpy as np
import pytest

from pareto_trm.criticality import omega_of_gradients
from pareto_trm.errors import ZeroDirection
from pareto_trm.linalg import box_multistart_minimize
from pareto_trm.problem import FeasibleSet
from pareto_trm.steps import (
    StepConfig,
    bar_sigma,
    exact_pareto_cauchy,
    local_ideal_point,
    modified_pareto_cauchy,
    pascoletti_serafini,
    strict_pareto_cauchy,
    sufficient_decrease_kappa,
)
from pareto_trm.surrogates import PolyModel, SurrogateBundle, hessian_bound

UNC = FeasibleSet.unconstrained()


def quad_model(c, n=1, scale=1.0):
    """Model (x - c)^T (x - c) * scale as a PolyModel."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    H = 2.0 * scale * np.eye(c.size)
    g = -2.0 * scale * c
    c0 = scale * float(c @ c)
    return PolyModel(np.zeros(c.size), 1.0, c0, g, H, 2)


def make_bundle(models, center, radius, fs=UNC):
    center = np.asarray(center, dtype=float)
    return SurrogateBundle(
        models=models,
        fully_linear=True,
        hessian_bound=hessian_bound(models, center, radius, fs, c=len(models)),
        center=center,
        radius=radius,
        training_sites=np.empty((0, center.size)),
        new_sites=0,
    )


def crit_at(bundle, x, fs=UNC):
    return omega_of_gradients(bundle.gradients(np.asarray(x, dtype=float)), x, fs)


class TestBarSigma:
    def test_short_direction(self):
        assert bar_sigma([0.5], 1.0) == pytest.approx(0.5)

    def test_long_direction_large_radius(self):
        assert bar_sigma([1.0], 2.0) == pytest.approx(2.0)

    def test_small_radius(self):
        assert bar_sigma([1.0], 0.3) == pytest.approx(0.3)

    def test_zero_direction(self):
        with pytest.raises(ZeroDirection):
            bar_sigma([0.0, 0.0], 1.0)


class TestModifiedPC:
    def test_quadratic_accepts_j0(self):
        model = quad_model([0.0])  # m(x) = x^2
        bundle = make_bundle([model], [1.0], 1.0)
        crit = crit_at(bundle, [1.0])
        assert crit.omega == pytest.approx(2.0)
        cfg = StepConfig(method="modified-pc", armijo_a=0.1, armijo_b=0.5)
        res = modified_pareto_cauchy(bundle, [1.0], 1.0, crit, cfg, UNC)
        assert res.backtracks == 0
        np.testing.assert_allclose(res.step, [-1.0])
        np.testing.assert_allclose(res.trial, [0.0])
        assert res.model_decrease == pytest.approx(1.0)

    def test_smallest_j_matches_scan_oracle(self, rng):
        cfg = StepConfig(method="modified-pc", armijo_a=0.1, armijo_b=0.5)
        for trial in range(50):
            scale = float(rng.uniform(0.5, 120.0))
            center = np.array([float(rng.uniform(0.5, 2.0))])
            model = quad_model([0.0], scale=scale)
            radius = float(rng.uniform(0.2, 1.0))
            bundle = make_bundle([model], center, radius)
            crit = crit_at(bundle, center)
            res = modified_pareto_cauchy(bundle, center, radius, crit, cfg, UNC)
            # independent linear scan over j
            d = crit.direction
            nd = np.max(np.abs(d))
            sigma = min(radius, nd) if (nd < 1 or radius <= 1) else radius
            expected = None
            phi_c = bundle.phi(center)
            for j in range(41):
                t = (cfg.armijo_b**j) * sigma
                cand = center + t * d / nd
                if bundle.phi(cand) <= phi_c - cfg.armijo_a * t * crit.omega / nd:
                    expected = j
                    break
            assert res.backtracks == expected

    def test_certificate_holds(self, rng):
        cfg = StepConfig(method="modified-pc")
        for _ in range(100):
            c1 = rng.uniform(-1, 1, size=2)
            c2 = rng.uniform(-1, 1, size=2)
            center = rng.uniform(-1, 1, size=2)
            bundle = make_bundle([quad_model(c1, 2), quad_model(c2, 2)], center, 0.5)
            crit = crit_at(bundle, center)
            if crit.omega <= 1e-12:
                continue
            res = modified_pareto_cauchy(bundle, center, 0.5, crit, cfg, UNC)
            assert res.certificate_lhs >= res.certificate_rhs - 1e-12
            assert res.kappa == pytest.approx(
                sufficient_decrease_kappa(cfg.armijo_a, cfg.armijo_b)
            )

    def test_trial_stays_in_region_and_box(self, rng):
        fs = FeasibleSet.box([0.0, 0.0], [1.0, 1.0])
        cfg = StepConfig(method="modified-pc")
        for _ in range(50):
            center = rng.uniform(0.05, 0.95, size=2)
            bundle = make_bundle([quad_model(rng.uniform(0, 1, 2), 2)], center, 0.2, fs)
            crit = crit_at(bundle, center, fs)
            if crit.omega <= 1e-10:
                continue
            res = modified_pareto_cauchy(bundle, center, 0.2, crit, cfg, fs)
            assert fs.contains(res.trial)
            assert np.max(np.abs(res.trial - center)) <= 0.2 + 1e-12


class TestStrictPC:
    def test_k1_equals_modified(self):
        model = quad_model([0.0])
        bundle = make_bundle([model], [1.0], 1.0)
        crit = crit_at(bundle, [1.0])
        cfg = StepConfig()
        mod = modified_pareto_cauchy(bundle, [1.0], 1.0, crit, cfg, UNC)
        strict = strict_pareto_cauchy(bundle, [1.0], 1.0, crit, cfg, UNC)
        assert mod.backtracks == strict.backtracks
        np.testing.assert_array_equal(mod.step, strict.step)

    def test_strict_j_not_smaller(self, rng):
        cfg = StepConfig()
        for _ in range(30):
            center = np.array([1.0])
            m1 = quad_model([0.0], scale=float(rng.uniform(0.5, 30)))
            m2 = quad_model([float(rng.uniform(0.0, 0.3))], scale=float(rng.uniform(0.5, 30)))
            bundle = make_bundle([m1, m2], center, 1.0)
            crit = crit_at(bundle, center)
            if crit.omega <= 1e-10:
                continue
            mod = modified_pareto_cauchy(bundle, center, 1.0, crit, cfg, UNC)
            strict = strict_pareto_cauchy(bundle, center, 1.0, crit, cfg, UNC)
            assert strict.backtracks >= mod.backtracks

    def test_every_objective_decreases(self, rng):
        cfg = StepConfig()
        for _ in range(30):
            center = rng.uniform(-1, 1, size=2)
            bundle = make_bundle(
                [quad_model(rng.uniform(-1, 1, 2), 2), quad_model(rng.uniform(-1, 1, 2), 2)],
                center,
                0.4,
            )
            crit = crit_at(bundle, center)
            if crit.omega <= 1e-10:
                continue
            res = strict_pareto_cauchy(bundle, center, 0.4, crit, cfg, UNC)
            assert np.all(res.per_objective_decrease > 0.0)

    def test_rejects_critical_center(self):
        bundle = make_bundle([quad_model([0.0])], [0.0], 1.0)
        crit = crit_at(bundle, [0.0])
        with pytest.raises(ValueError):
            strict_pareto_cauchy(bundle, [0.0], 1.0, crit, StepConfig(), UNC)


class TestExactPC:
    def test_vertex_of_parabola(self):
        model = quad_model([0.0])
        bundle = make_bundle([model], [1.0], 5.0)
        crit = crit_at(bundle, [1.0])
        res = exact_pareto_cauchy(bundle, [1.0], 5.0, crit, UNC)
        np.testing.assert_allclose(res.trial, [0.0], atol=1e-6)

    def test_boundary_when_radius_small(self):
        model = quad_model([0.0])
        bundle = make_bundle([model], [1.0], 0.3)
        crit = crit_at(bundle, [1.0])
        res = exact_pareto_cauchy(bundle, [1.0], 0.3, crit, UNC)
        np.testing.assert_allclose(res.trial, [0.7], atol=1e-6)

    def test_crossing_quadratics_match_dense_grid(self):
        m1 = quad_model([0.0])
        m2 = quad_model([0.5], scale=2.0)
        center = np.array([1.0])
        bundle = make_bundle([m1, m2], center, 1.0)
        crit = crit_at(bundle, center)
        res = exact_pareto_cauchy(bundle, center, 1.0, crit, UNC, grid_points=64)
        d = crit.direction
        sigmas = np.linspace(0, 1.0 / np.max(np.abs(d)), 100001)
        pts = center[None, :] + sigmas[:, None] * d[None, :]
        dense_best = np.min(bundle.phi_many(pts))
        assert bundle.phi(res.trial) == pytest.approx(dense_best, abs=1e-4)

    def test_dominates_modified(self, rng):
        cfg = StepConfig(method="modified-pc")
        for _ in range(100):
            center = rng.uniform(-1, 1, size=2)
            bundle = make_bundle(
                [quad_model(rng.uniform(-1, 1, 2), 2), quad_model(rng.uniform(-1, 1, 2), 2)],
                center,
                0.5,
            )
            crit = crit_at(bundle, center)
            if crit.omega <= 1e-10:
                continue
            mod = modified_pareto_cauchy(bundle, center, 0.5, crit, cfg, UNC)
            exact = exact_pareto_cauchy(bundle, center, 0.5, crit, UNC)
            assert exact.model_decrease >= mod.model_decrease - 1e-9
            assert mod.model_decrease >= 0.0


class TestIdealPoint:
    def test_center_is_ideal_for_centered_quadratics(self):
        center = np.array([0.4, 0.6])
        model = quad_model(center, 2)
        bundle = make_bundle([model], center, 0.3)
        ideal = local_ideal_point(bundle, center, 0.3, UNC)
        assert ideal[0] == pytest.approx(0.0, abs=1e-8)

    def test_linear_model_hits_region_vertex(self):
        model = PolyModel(np.zeros(2), 1.0, 0.0, np.array([1.0, -1.0]), np.zeros((2, 2)), 1)
        center = np.array([0.5, 0.5])
        bundle = make_bundle([model], center, 0.25)
        ideal = local_ideal_point(bundle, center, 0.25, UNC)
        assert ideal[0] == pytest.approx(model.value([0.25, 0.75]), abs=1e-8)


class TestPascolettiSerafini:
    def test_zero_step_at_model_critical_center(self):
        center = np.array([0.4, 0.6])
        bundle = make_bundle([quad_model(center, 2)], center, 0.3)
        crit = crit_at(bundle, center)
        res = pascoletti_serafini(bundle, center, 0.3, crit, UNC, StepConfig())
        assert res.is_zero
        assert res.tau == 0.0

    def test_k1_matches_direct_minimization(self):
        c = np.array([0.2, 0.1])
        model = quad_model(c, 2)
        center = np.array([0.8, 0.9])
        bundle = make_bundle([model], center, 2.0)
        crit = crit_at(bundle, center)
        res = pascoletti_serafini(bundle, center, 2.0, crit, UNC, StepConfig())
        lo, hi = center - 2.0, center + 2.0
        direct, _ = box_multistart_minimize(
            model.values, model.gradients, lo, hi, 12, seed=3, include=center[None, :]
        )
        assert np.max(np.abs(res.trial - direct)) <= 1e-5

    def test_symmetric_quadratics_move_toward_segment(self):
        a, b = np.array([0.0, 0.0]), np.array([1.0, 0.0])
        center = np.array([0.5, 0.8])  # equidistant from a and b
        bundle = make_bundle([quad_model(a, 2), quad_model(b, 2)], center, 0.5)
        crit = crit_at(bundle, center)
        res = pascoletti_serafini(bundle, center, 0.5, crit, UNC, StepConfig())
        assert res.trial[1] < center[1]  # moved toward the segment
        assert res.certificate_lhs >= res.certificate_rhs - 1e-12
        # tau against a dense grid over the region
        xs = np.linspace(0.0, 1.0, 201)
        ys = np.linspace(0.3, 1.3, 201)
        A, B = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([A.ravel(), B.ravel()])
        m_center = bundle.values(center)
        ideal = local_ideal_point(bundle, center, 0.5, UNC)
        r = np.maximum(m_center - ideal, 1e-12)
        ratios = (bundle.values_many(pts) - m_center[None, :]) / r[None, :]
        tau_grid = np.min(np.max(ratios, axis=1))
        assert res.tau is not None
        assert res.tau <= tau_grid + 1e-3

    def test_certificate_on_random_bundles(self, rng):
        cfg = StepConfig()
        for _ in range(50):
            center = rng.uniform(-0.5, 0.5, size=2)
            bundle = make_bundle(
                [quad_model(rng.uniform(-1, 1, 2), 2), quad_model(rng.uniform(-1, 1, 2), 2)],
                center,
                0.4,
            )
            crit = crit_at(bundle, center)
            if crit.omega <= 1e-10:
                continue
            res = pascoletti_serafini(bundle, center, 0.4, crit, UNC, cfg)
            assert res.certificate_lhs >= res.certificate_rhs - 1e-12
            assert UNC.contains(res.trial)
            assert np.max(np.abs(res.trial - center)) <= 0.4 + 1e-10
