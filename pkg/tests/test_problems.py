import math

import numpy as np
import pytest

from critbatch import rng
from critbatch.problems import (
    FINITE_SUM, InvalidProblemError, OracleMode, additive_noise, batch_gradient, component_variance,
    full_value_grad, make_logistic, make_quadratic_sine, minibatch_gradient, value_grad_batch,
)


def fd_grad(problem, theta):
    h = 1e-6 * (1 + np.linalg.norm(theta))
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (full_value_grad(problem, theta + e)[0] - full_value_grad(problem, theta - e)[0]) / (2 * h)
    return g


class TestQuadraticSine:
    def test_single_component(self):
        p = make_quadratic_sine(0, 1, 1, [1.0], centers=[[0.7]], theta0=[2.0])
        assert p.sigma2 == 0 and p.L == 1 and p.f_star == 0
        assert full_value_grad(p, np.array([1.7]))[0] == pytest.approx(0.5)

    def test_two_components(self):
        p = make_quadratic_sine(0, 2, 1, [1.0], centers=[[-1.0], [1.0]])
        assert p.params["cbar"][0] == 0 and p.sigma2 == 1.0

    def test_variance_is_exact_everywhere(self):
        p = make_quadratic_sine(1, 100, 20, np.linspace(0.1, 2.0, 20), eps_nc=0.2)
        gen = np.random.default_rng(0)
        for _ in range(50):
            theta = gen.normal(scale=5, size=20)
            assert component_variance(p, theta) == pytest.approx(p.sigma2, rel=1e-12)

    def test_gradient_zero_at_center(self, quad):
        _, g = full_value_grad(quad, quad.params["cbar"])
        assert np.all(g == 0)

    def test_invalid_spectrum(self):
        with pytest.raises(InvalidProblemError):
            make_quadratic_sine(0, 5, 2, [1.0, 0.0])
        with pytest.raises(InvalidProblemError):
            make_quadratic_sine(0, 5, 2, [1.0])

    def test_smoothness_constant(self):
        p = make_quadratic_sine(2, 10, 6, np.linspace(0.3, 1.5, 6), eps_nc=0.4)
        assert p.L == pytest.approx(1.9)

    def test_record(self, quad):
        r = quad.record()
        assert set(r) == {"kind", "seed", "n", "d", "L", "sigma2", "f_star", "delta0"}
        assert r["delta0"] == pytest.approx(full_value_grad(quad, quad.theta0)[0] - quad.f_star)


class TestLogistic:
    def test_single_sample_has_no_variance(self):
        p = make_logistic(0, 1, 4, 0.1)
        assert p.sigma2 == 0

    def test_zero_features_rejected(self):
        with pytest.raises(InvalidProblemError):
            make_logistic(0, 5, 3, 0.0, features=np.zeros((5, 3)), labels=np.ones(5))

    def test_value_at_origin(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        y = np.array([1, -1, 1, -1, 1, -1.0])
        p = make_logistic(0, 6, 3, 0.2, features=X, labels=y)
        assert full_value_grad(p, np.zeros(3))[0] == pytest.approx(math.log(2), rel=1e-15)

    def test_degenerate_labels_warn(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        p = make_logistic(0, 6, 3, 0.2, features=X, labels=np.ones(6))
        assert "warning" in p.metadata

    def test_f_star_solver_independent(self):
        a = make_logistic(7, 200, 10, 0.1, solver_seed=0)
        b = make_logistic(7, 200, 10, 0.1, solver_seed=99)
        assert abs(a.f_star - b.f_star) < 1e-10
        _, g = full_value_grad(a, np.zeros(10))
        assert np.linalg.norm(g) > 0

    def test_f_star_matches_scipy(self, logistic):
        from scipy.optimize import minimize
        res = minimize(lambda t: full_value_grad(logistic, t)[0], np.zeros(10),
                       jac=lambda t: full_value_grad(logistic, t)[1], method="BFGS", tol=1e-12)
        assert logistic.f_star <= res.fun + 1e-12
        assert logistic.f_star == pytest.approx(res.fun, abs=1e-9)

    def test_probe_metadata(self, logistic):
        probes = logistic.metadata["sigma2_probes"]
        assert probes["count"] == 256
        assert logistic.sigma2 == pytest.approx(1.5 * probes["max_variance"])


class TestInvariants:
    @pytest.mark.parametrize("name", ["quad", "quad_nc", "logistic"])
    def test_gradients_match_finite_differences(self, name, request):
        p = request.getfixturevalue(name)
        gen = np.random.default_rng(1)
        for _ in range(100):
            theta = gen.normal(scale=2, size=p.d)
            g = full_value_grad(p, theta)[1]
            assert np.linalg.norm(fd_grad(p, theta) - g) <= 1e-5 * max(1.0, np.linalg.norm(g))

    @pytest.mark.parametrize("name", ["quad", "quad_nc", "logistic"])
    def test_smoothness_and_lower_bound(self, name, request):
        p = request.getfixturevalue(name)
        gen = np.random.default_rng(2)
        x = gen.normal(scale=3, size=(10**4, p.d))
        y = x + gen.normal(scale=gen.uniform(1e-3, 3, size=(10**4, 1)), size=(10**4, p.d))
        fx, gx = value_grad_batch(p, x)
        _, gy = value_grad_batch(p, y)
        ratio = np.linalg.norm(gx - gy, axis=1) / np.linalg.norm(x - y, axis=1)
        assert ratio.max() <= p.L * (1 + 1e-12)
        assert fx.min() >= p.f_star - 1e-12
        assert full_value_grad(p, p.theta0)[0] - p.f_star <= p.delta0 * (1 + 1e-12)

    def test_logistic_variance_bound_on_probe_ball(self, logistic):
        gen = np.random.default_rng(3)
        for _ in range(50):
            theta = logistic.theta0 + gen.normal(size=10) * 0.3
            assert component_variance(logistic, theta) <= logistic.sigma2


class TestOracle:
    def test_modes(self, quad):
        with pytest.raises(ValueError):
            OracleMode("bootstrap")
        with pytest.raises(ValueError):
            OracleMode("finite-sum", sigma2=1.0)
        with pytest.raises(ValueError):
            FINITE_SUM.check_batch(quad, quad.n + 1)
        additive_noise().check_batch(quad, 10 * quad.n)
        assert additive_noise(2.5).variance(quad) == 2.5

    def test_zero_variance_is_exact(self):
        p = make_quadratic_sine(0, 1, 3, [1.0, 2.0, 3.0])
        theta = np.array([0.3, -1.0, 2.0])
        g = full_value_grad(p, theta)[1]
        for oracle, sizes in ((FINITE_SUM, (1,)), (additive_noise(), (1, 4, 1000))):
            for b in sizes:
                assert np.array_equal(minibatch_gradient(p, oracle, theta, b, rng.StreamState(1)), g)

    def test_dimension_mismatch(self, quad):
        with pytest.raises(ValueError):
            full_value_grad(quad, np.zeros(3))
        with pytest.raises(ValueError):
            minibatch_gradient(quad, FINITE_SUM, np.zeros(3), 1, rng.StreamState(0))

    def test_state_determinism(self, quad):
        a = [minibatch_gradient(quad, FINITE_SUM, quad.theta0, 4, st) for st in [rng.StreamState(5)] * 3]
        b = [minibatch_gradient(quad, FINITE_SUM, quad.theta0, 4, st) for st in [rng.StreamState(5)] * 3]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not np.array_equal(a[0], a[1])

    @pytest.mark.parametrize("mode", ["finite-sum", "additive-noise"])
    @pytest.mark.parametrize("b", [1, 4, 16, 64])
    def test_unbiased_with_contracted_variance(self, quad, mode, b):
        oracle = OracleMode(mode)
        draws = 10**5
        theta = quad.theta0
        g = full_value_grad(quad, theta)[1]
        thetas = np.tile(theta, (draws, 1))
        keys = rng.stream_keys(11, np.arange(draws), 0)
        est = batch_gradient(quad, oracle, thetas, b, keys)
        err = est - g
        sq = np.sum(err * err, axis=1)
        assert np.linalg.norm(err.mean(axis=0)) <= 3 * math.sqrt(quad.sigma2 / (b * draws))
        assert sq.mean() <= quad.sigma2 / b * (1 + 3 * math.sqrt(2 / draws))
        assert sq.mean() == pytest.approx(quad.sigma2 / b, rel=0.03)

    def test_logistic_variance_contract(self, logistic):
        draws, b = 2 * 10**4, 4
        theta = logistic.theta0
        g = full_value_grad(logistic, theta)[1]
        keys = rng.stream_keys(3, np.arange(draws), 0)
        est = batch_gradient(logistic, FINITE_SUM, np.tile(theta, (draws, 1)), b, keys)
        sq = np.sum((est - g) ** 2, axis=1)
        assert sq.mean() <= logistic.sigma2 / b * (1 + 3 * math.sqrt(2 / draws))
