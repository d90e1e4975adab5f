import numpy as np
import pytest

from pareto_trm.errors import BudgetExhausted
from pareto_trm.linalg import halton
from pareto_trm.problem import EvaluationDatabase, FeasibleSet, MOProblem
from pareto_trm.surrogates import (
    MODEL_SPECS,
    ModelSpec,
    SurrogateBundle,
    adaptive_shape,
    build_bundle,
    build_lagrange,
    build_rbf,
    build_taylor_fd,
    hessian_bound,
    improve_model,
    kernel_value,
    model_debug_json,
    poly_basis_size,
)


def scalar_problem(fn, n, box=None, expensive=True, name="scalar"):
    fs = FeasibleSet.box(*box) if box else FeasibleSet.unconstrained()
    return MOProblem(n, 1, [fn], np.array([expensive]), fs, name=name)


def test_kernel_table_values():
    assert kernel_value("cubic", 2.0) == pytest.approx(8.0)
    assert kernel_value("gaussian", 0.0, alpha=1.0) == pytest.approx(1.0)
    assert kernel_value("multiquadric", 0.0, alpha=1.0) == pytest.approx(-1.0)


def test_adaptive_shape():
    assert adaptive_shape(0.1, 20.0, 1e-2, 1e3) == pytest.approx(200.0)
    assert adaptive_shape(1e6, 20.0, 1e-2, 1e3) == pytest.approx(1e-2)
    assert adaptive_shape(1e-9, 20.0, 1e-2, 1e3) == pytest.approx(1e3)


def test_cubic_kernel_requires_linear_tail():
    with pytest.raises(ValueError):
        ModelSpec(kind="rbf", kernel="cubic", tail_degree=0)


def test_lambda_must_exceed_one():
    with pytest.raises(ValueError):
        ModelSpec(kind="lagrange", lambda_poised=1.0)


class TestRBF:
    def test_affine_reproduction(self):
        prob = scalar_problem(lambda x: 3.0 * x[0] + 1.0, 1, box=([0.0], [1.0]))
        db = EvaluationDatabase(prob)
        spec = MODEL_SPECS["rbf-cubic"]
        model = build_rbf(0, db, spec, np.array([0.5]), 0.25, 0.5, prob.feasible.scaled(), 0)
        xs = np.linspace(0.0, 1.0, 21)[:, None]
        np.testing.assert_allclose(model.values(xs), 3.0 * xs[:, 0] + 1.0, atol=1e-8)
        assert np.max(np.abs(model.coeffs)) <= 1e-8  # kernel part vanishes
        np.testing.assert_allclose(model.gradient(np.array([0.3])), [3.0], atol=1e-8)

    def test_interpolates_training_sites(self, rng):
        prob = scalar_problem(
            lambda x: float(np.sin(3 * x[0]) + x[1] ** 2), 2, box=([0, 0], [1, 1])
        )
        db = EvaluationDatabase(prob)
        # seed the database so extra points get recycled into the model
        for z in halton(8, 2, offset=5):
            db.evaluate(z)
        spec = MODEL_SPECS["rbf-cubic"]
        center = np.array([0.5, 0.5])
        model = build_rbf(0, db, spec, center, 0.2, 0.5, prob.feasible.scaled(), 0)
        for site in model.training_sites:
            f = db.evaluate(site)[0]
            assert abs(model.value(site) - f) <= 1e-7 * (1 + abs(f))

    def test_first_build_uses_n_plus_one_sites(self):
        fs = FeasibleSet.box([0.0, 0.0], [1.0, 1.0])
        prob = MOProblem(
            2,
            2,
            [lambda x: float(x[0] ** 2 + x[1]), lambda x: float(x[0])],
            np.array([True, False]),
            fs,
            [None, lambda x: np.array([1.0, 0.0])],
        )
        db = EvaluationDatabase(prob)
        bundle = build_bundle(prob, db, MODEL_SPECS["rbf-cubic"], np.array([0.5, 0.5]), 0.1, 0.5)
        assert bundle.new_sites == 3
        assert bundle.fully_linear
        assert db.eval_counts[0] == 3 and db.eval_counts[1] == 0
        rebuilt = build_bundle(prob, db, MODEL_SPECS["rbf-cubic"], np.array([0.5, 0.5]), 0.1, 0.5)
        assert rebuilt.new_sites == 0  # full recycling

    def test_gradient_hessian_consistency(self, rng):
        prob = scalar_problem(
            lambda x: float(np.exp(x[0]) * np.cos(2 * x[1])), 2, box=([0, 0], [1, 1])
        )
        db = EvaluationDatabase(prob)
        for z in halton(10, 2, offset=11):
            db.evaluate(z)
        for name in ("rbf-cubic", "rbf-multiquadric", "rbf-gaussian"):
            model = build_rbf(
                0, db, MODEL_SPECS[name], np.array([0.4, 0.6]), 0.2, 0.5,
                prob.feasible.scaled(), 0,
            )
            u = np.array([0.45, 0.55])
            h = 1e-6
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (model.value(u + e) - model.value(u - e)) / (2 * h)
                assert model.gradient(u)[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)
                fd_h = (model.gradient(u + e) - model.gradient(u - e)) / (2 * h)
                np.testing.assert_allclose(model.hessian(u)[i], fd_h, rtol=1e-3, atol=1e-4)

    def test_collinear_database_gets_offline_point(self):
        # degenerate geometry in the database is repaired with a fresh point
        prob = scalar_problem(lambda x: float(x[0] + x[1]), 2, box=([-1, -1], [1, 1]))
        db = EvaluationDatabase(prob)
        for x0 in (0.0, 0.1, 0.2):
            db.evaluate([x0 - 0.0, 0.0] if x0 else [0.0, 0.0])
        model = build_rbf(
            0, db, MODEL_SPECS["rbf-cubic"], np.zeros(2), 0.2, 0.5,
            prob.feasible.scaled(), 0,
        )
        T = model.training_sites
        spans = T[1:] - T[0]
        assert np.linalg.matrix_rank(spans, tol=1e-8) == 2

    def test_budget_exhausted_propagates(self):
        prob = scalar_problem(lambda x: float(x[0]), 2, box=([0, 0], [1, 1]))
        db = EvaluationDatabase(prob, max_expensive=2)
        with pytest.raises(BudgetExhausted):
            build_rbf(
                0, db, MODEL_SPECS["rbf-cubic"], np.array([0.5, 0.5]), 0.1, 0.5,
                prob.feasible.scaled(), 0,
            )


class TestLagrange:
    def test_kronecker_property_degree1(self):
        prob = scalar_problem(lambda x: float(x[0]), 1, box=([0.0], [1.0]))
        db = EvaluationDatabase(prob)
        db.evaluate([0.0])
        db.evaluate([1.0])
        model = build_lagrange(
            0, db, MODEL_SPECS["lagrange-1"], np.array([0.0]), 0.5,
            prob.feasible.scaled(), 0,
        )
        machine = model.machine
        sites = np.vstack(machine.sites)
        L = machine.lagrange_values(sites)
        np.testing.assert_allclose(L, np.eye(len(machine.sites)), atol=1e-9)

    def test_degree2_reproduces_quadratic(self):
        prob = scalar_problem(lambda x: float(x[0] ** 2), 1, box=([0.0], [1.0]))
        db = EvaluationDatabase(prob)
        for v in (0.0, 0.5, 1.0):
            db.evaluate([v])
        model = build_lagrange(
            0, db, MODEL_SPECS["lagrange-2"], np.array([0.5]), 0.3,
            prob.feasible.scaled(), 0,
        )
        xs = np.linspace(0, 1, 31)[:, None]
        np.testing.assert_allclose(model.values(xs), xs[:, 0] ** 2, atol=1e-8)

    def test_lambda_certificate_by_dense_sampling(self):
        prob = scalar_problem(
            lambda x: float(np.sin(3 * x[0]) + x[1] ** 2), 2, box=([0, 0], [1, 1])
        )
        db = EvaluationDatabase(prob)
        spec = MODEL_SPECS["lagrange-2"]
        center = np.array([0.5, 0.5])
        model = build_lagrange(0, db, spec, center, 0.1, prob.feasible.scaled(), 0)
        assert model.fully_linear
        machine = model.machine
        xs = np.linspace(machine.lo[0], machine.hi[0], 80)
        ys = np.linspace(machine.lo[1], machine.hi[1], 80)
        A, B = np.meshgrid(xs, ys, indexing="ij")
        grid = np.column_stack([A.ravel(), B.ravel()])
        L = machine.lagrange_values(grid)
        assert np.max(np.abs(L)) <= spec.lambda_poised * 1.05

    def test_interpolation_at_sites(self):
        prob = scalar_problem(
            lambda x: float(np.cos(x[0]) * x[1]), 2, box=([0, 0], [1, 1])
        )
        db = EvaluationDatabase(prob)
        model = build_lagrange(
            0, db, MODEL_SPECS["lagrange-2"], np.array([0.3, 0.7]), 0.15,
            prob.feasible.scaled(), 0,
        )
        for site in model.training_sites:
            f = db.evaluate(site)[0]
            assert abs(model.value(site) - f) <= 1e-7 * (1 + abs(f))

    def test_stencil_path_for_large_n(self):
        n = 6
        prob = scalar_problem(
            lambda x: float(np.sum(x**2)), n, box=(np.zeros(n), np.ones(n))
        )
        db = EvaluationDatabase(prob)
        model = build_lagrange(
            0, db, MODEL_SPECS["lagrange-2"], np.full(n, 0.5), 0.1,
            prob.feasible.scaled(), 0,
        )
        assert model.fully_linear
        assert len(model.training_sites) == poly_basis_size(n, 2)
        pts = 0.4 + 0.2 * halton(20, n, offset=3)
        np.testing.assert_allclose(model.values(pts), np.sum(pts**2, axis=1), atol=1e-7)

    def test_evaluation_count_matches_new_sites(self):
        prob = scalar_problem(lambda x: float(x[0] * x[1]), 2, box=([0, 0], [1, 1]))
        db = EvaluationDatabase(prob)
        before = len(db)
        model = build_lagrange(
            0, db, MODEL_SPECS["lagrange-2"], np.array([0.5, 0.5]), 0.1,
            prob.feasible.scaled(), 0,
        )
        assert len(db) - before == len(model.training_sites)
        assert db.eval_counts[0] == len(model.training_sites)


class TestTaylor:
    def test_linear_exactness(self):
        prob = scalar_problem(lambda x: float(2 * x[0] - 1.0), 1, box=([0.0], [1.0]))
        db = EvaluationDatabase(prob)
        model = build_taylor_fd(
            0, db, MODEL_SPECS["taylor-fd1"], np.array([0.4]), 0.2, prob.feasible.scaled()
        )
        xs = np.linspace(0, 1, 11)[:, None]
        np.testing.assert_allclose(model.values(xs), 2 * xs[:, 0] - 1.0, atol=1e-10)

    def test_quadratic_slope_exact_central(self):
        prob = scalar_problem(lambda x: float(x[0] ** 2), 1, box=([0.0], [1.0]))
        db = EvaluationDatabase(prob)
        model = build_taylor_fd(
            0, db, MODEL_SPECS["taylor-fd1"], np.array([0.5]), 0.2, prob.feasible.scaled()
        )
        assert model.gradient(np.array([0.5]))[0] == pytest.approx(1.0, abs=1e-9)

    def test_one_sided_at_face_keeps_db_feasible(self):
        prob = scalar_problem(lambda x: float(x[0] + x[1]), 2, box=([0, 0], [1, 1]))
        db = EvaluationDatabase(prob)
        build_taylor_fd(
            0, db, MODEL_SPECS["taylor-fd1"], np.array([0.0, 0.5]), 0.2,
            prob.feasible.scaled(),
        )
        for site in db.sites:
            assert prob.feasible.contains(site)

    def test_cost_is_2n_plus_1(self):
        prob = scalar_problem(lambda x: float(np.sum(x)), 3, box=(np.zeros(3), np.ones(3)))
        db = EvaluationDatabase(prob)
        build_taylor_fd(
            0, db, MODEL_SPECS["taylor-fd1"], np.full(3, 0.5), 0.2, prob.feasible.scaled()
        )
        assert db.eval_counts[0] == 2 * 3 + 1


class TestHessianBound:
    def test_linear_model_clamps(self):
        prob = scalar_problem(lambda x: float(x[0]), 1, box=([0.0], [1.0]))
        db = EvaluationDatabase(prob)
        model = build_taylor_fd(
            0, db, MODEL_SPECS["taylor-fd1"], np.array([0.5]), 0.2, prob.feasible.scaled()
        )
        H = hessian_bound([model], np.array([0.5]), 0.2, prob.feasible.scaled(), c=2.0)
        assert H == pytest.approx(1.01 / 2.0)

    def test_quadratic_exact_before_clamp(self):
        from pareto_trm.surrogates import PolyModel

        model = PolyModel(np.zeros(2), 1.0, 0.0, np.zeros(2), 2.0 * np.eye(2), 2)
        lo, hi = -np.ones(2), np.ones(2)
        assert model.hessian_norm_bound(lo, hi) == pytest.approx(2.0 * np.sqrt(2.0))

    def test_rbf_bound_dominates_grid(self):
        prob = scalar_problem(
            lambda x: float(np.sin(4 * x[0]) * x[1]), 2, box=([0, 0], [1, 1])
        )
        db = EvaluationDatabase(prob)
        for z in halton(9, 2, offset=23):
            db.evaluate(z)
        model = build_rbf(
            0, db, MODEL_SPECS["rbf-cubic"], np.array([0.5, 0.5]), 0.2, 0.5,
            prob.feasible.scaled(), 0,
        )
        lo, hi = np.array([0.3, 0.3]), np.array([0.7, 0.7])
        bound = model.hessian_norm_bound(lo, hi, model.training_sites)
        xs = np.linspace(0.3, 0.7, 25)
        worst = max(
            np.linalg.norm(model.hessian(np.array([a, b]))) for a in xs for b in xs
        )
        assert bound >= worst * 0.999


class TestImprove:
    def _stalled_model(self):
        prob = scalar_problem(
            lambda x: float(np.sin(3 * x[0]) + x[1] ** 2), 2, box=([0, 0], [1, 1])
        )
        db = EvaluationDatabase(prob)
        model = build_lagrange(
            0, db, MODEL_SPECS["lagrange-2"], np.array([0.5, 0.5]), 0.1,
            prob.feasible.scaled(), 0, max_repair=0,
        )
        bundle = SurrogateBundle(
            models=[model],
            fully_linear=model.fully_linear,
            hessian_bound=1.0,
            center=np.array([0.5, 0.5]),
            radius=0.1,
            training_sites=model.training_sites,
            new_sites=len(db),
        )
        return prob, db, bundle

    def test_improve_requires_not_fully_linear(self):
        prob, db, bundle = self._stalled_model()
        assert not bundle.fully_linear
        improved = improve_model(bundle, prob, db, MODEL_SPECS["lagrange-2"], 0.5)
        assert improved.fully_linear
        with pytest.raises(ValueError):
            improve_model(improved, prob, db, MODEL_SPECS["lagrange-2"], 0.5)

    def test_improve_increases_score_or_certifies(self):
        prob, db, bundle = self._stalled_model()
        score = bundle.models[0].geometry_score
        improved = improve_model(bundle, prob, db, MODEL_SPECS["lagrange-2"], 0.5)
        assert improved.fully_linear or improved.models[0].geometry_score > score


def test_all_cheap_bundle_is_free():
    fs = FeasibleSet.box([0.0, 0.0], [1.0, 1.0])
    prob = MOProblem(
        2,
        2,
        [lambda x: float(np.sum((x - 0.2) ** 2)), lambda x: float(np.sum((x - 0.8) ** 2))],
        np.array([False, False]),
        fs,
        [lambda x: 2 * (x - 0.2), lambda x: 2 * (x - 0.8)],
    )
    db = EvaluationDatabase(prob)
    bundle = build_bundle(prob, db, None, np.array([0.5, 0.5]), 0.1, 0.5)
    assert bundle.fully_linear
    assert bundle.new_sites == 0
    assert len(db) == 0
    u = np.array([0.4, 0.6])
    np.testing.assert_allclose(
        bundle.values(u), [np.sum((u - 0.2) ** 2), np.sum((u - 0.8) ** 2)], atol=1e-12
    )
    # scaled-space gradients include the box width chain rule (width 1 here)
    np.testing.assert_allclose(bundle.gradients(u)[0], 2 * (u - 0.2), atol=1e-10)


def test_model_debug_json_golden(tmp_path):
    prob = scalar_problem(lambda x: float(x[0] + 2 * x[1]), 2, box=([0, 0], [1, 1]))
    db = EvaluationDatabase(prob)
    model = build_rbf(
        0, db, MODEL_SPECS["rbf-cubic"], np.array([0.5, 0.5]), 0.1, 0.5,
        prob.feasible.scaled(), 0,
    )
    dump = model_debug_json(model)
    golden = (
        __file__.replace("test_surrogates.py", "golden/rbf_model.json")
    )
    with open(golden, encoding="utf-8") as fh:
        assert dump == fh.read()
