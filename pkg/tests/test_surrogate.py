import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transitcal.surrogate import CubicRBF, DISTANCE_CYCLE, cors_optimize, latin_hypercube


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


class TestCubicRBF:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 10_000))
    def test_interpolates(self, dim, seed):
        rng = np.random.default_rng(seed)
        X = rng.random((3 * dim + 4, dim))
        f = np.sin(3 * X).sum(axis=1) + rng.normal(size=len(X))
        model = CubicRBF(dim).fit(X, f)
        np.testing.assert_allclose(model(X), f, atol=1e-6)

    def test_reproduces_linear_functions(self):
        rng = np.random.default_rng(0)
        X = rng.random((12, 3))
        f = 2.0 + X @ np.array([1.0, -3.0, 0.5])
        model = CubicRBF(3).fit(X, f)
        y = rng.random((20, 3))
        np.testing.assert_allclose(model(y), 2.0 + y @ np.array([1.0, -3.0, 0.5]), atol=1e-8)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        X = rng.random((15, 3))
        model = CubicRBF(3).fit(X, np.cos(4 * X).sum(axis=1))
        x = rng.random(3)
        h = 1e-6
        fd = [(model(x + h * e)[0] - model(x - h * e)[0]) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(model.gradient(x), fd, rtol=1e-5, atol=1e-7)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            CubicRBF(3).fit(np.zeros((3, 3)), np.zeros(3))

    def test_duplicate_points_are_singular(self):
        X = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.9], [0.7, 0.1]])
        with pytest.raises(np.linalg.LinAlgError):
            CubicRBF(2).fit(X, np.arange(4.0))


class TestLatinHypercube:
    def test_one_point_per_stratum(self):
        pts = latin_hypercube(10, 4, np.random.default_rng(3))
        assert pts.shape == (10, 4)
        for j in range(4):
            assert sorted(np.floor(pts[:, j] * 10).astype(int)) == list(range(10))


class TestCors:
    def test_sphere(self):
        res = cors_optimize(sphere, [(-2.0, 2.0)] * 4, budget=60, seed=0)
        assert res.fun <= 0.05
        assert res.nfev == 60

    def test_incumbent_nonincreasing_and_consistent(self):
        res = cors_optimize(sphere, [(-2.0, 2.0)] * 4, budget=40, seed=1)
        best = [e.best for e in res.trace]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert best[-1] == res.fun == min(e.value for e in res.trace)
        assert sphere(res.x) == res.fun

    def test_final_surrogate_interpolates_trace(self):
        res = cors_optimize(sphere, [(-2.0, 2.0)] * 4, budget=40, seed=2)
        u = (np.array([e.x for e in res.trace]) + 2.0) / 4.0
        np.testing.assert_allclose(res.surrogate(u), [e.value for e in res.trace], atol=1e-6)

    def test_budget_equal_to_design(self):
        res = cors_optimize(sphere, [(-2.0, 2.0)] * 4, budget=10, seed=0)
        assert len(res.trace) == 10
        assert {e.phase for e in res.trace} == {"design"}
        assert res.fun == min(e.value for e in res.trace)

    def test_deterministic(self):
        a = cors_optimize(sphere, [(-2.0, 2.0)] * 3, budget=25, seed=7)
        b = cors_optimize(sphere, [(-2.0, 2.0)] * 3, budget=25, seed=7)
        assert a.trace == b.trace
        c = cors_optimize(sphere, [(-2.0, 2.0)] * 3, budget=25, seed=8)
        assert a.trace != c.trace

    def test_points_stay_in_bounds(self):
        bounds = [(-1.0, 3.0), (10.0, 11.0)]
        res = cors_optimize(lambda x: (x[0] - 3) ** 2 + (x[1] - 10) ** 2, bounds, budget=30, seed=0)
        X = np.array([e.x for e in res.trace])
        assert np.all(X >= [-1.0, 10.0]) and np.all(X <= [3.0, 11.0])

    def test_radius_cycles(self):
        res = cors_optimize(sphere, [(-1.0, 1.0)] * 2, budget=6 + 2 * len(DISTANCE_CYCLE), seed=0)
        radii = [e.radius for e in res.trace if e.phase != "design"]
        expected = [r * np.sqrt(2) for r in DISTANCE_CYCLE] * 2
        np.testing.assert_allclose(radii, expected)

    def test_log_transform(self):
        res = cors_optimize(lambda x: 1e4 * sphere(x), [(-2.0, 2.0)] * 2, budget=40, seed=0, log_transform=True)
        assert res.fun <= 1e4 * 0.05
        with pytest.raises(ValueError):
            cors_optimize(lambda x: -1.0, [(-1.0, 1.0)] * 2, budget=8, log_transform=True)

    @pytest.mark.parametrize("bounds", [[(0.0, 0.0)], [(1.0, 0.0)], [(0.0, np.inf)], [(np.nan, 1.0)], [0.0, 1.0]])
    def test_invalid_bounds(self, bounds):
        with pytest.raises(ValueError):
            cors_optimize(sphere, bounds, budget=20)

    def test_budget_below_design(self):
        with pytest.raises(ValueError):
            cors_optimize(sphere, [(-1.0, 1.0)] * 4, budget=9)

    def test_flat_objective_survives_singular_fits(self):
        # a constant objective gives a zero-weight interpolant; search must still finish
        res = cors_optimize(lambda x: 1.0, [(-1.0, 1.0)] * 2, budget=30, seed=0)
        assert res.nfev == 30 and res.fun == 1.0

    def test_callback_sees_every_evaluation(self):
        seen = []
        res = cors_optimize(sphere, [(-1.0, 1.0)] * 2, budget=15, seed=0, callback=seen.append)
        assert seen == res.trace
