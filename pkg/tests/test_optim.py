import numpy as np
import pytest

from pinnproj.optim import (LbfgsConfig, OptimizationAborted, Prng, adam_minimize,
                            curvature_pair_ok, lbfgs_minimize, prng_normal, prng_uniform)


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def quadratic(n=10, seed=0):
    """f = (x - x*)^T A (x - x*) / 2 with a closed-form minimiser x*."""
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.normal(size=(n, n)))[0]
    A = Q @ np.diag(np.linspace(1, 20, n)) @ Q.T
    x_star = rng.normal(size=n)

    def f(x):
        r = x - x_star
        return 0.5 * r @ A @ r, A @ r

    return f, x_star


def test_rosenbrock():
    x, trace = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]))
    assert rosenbrock(x)[0] <= 1e-10
    np.testing.assert_allclose(x, [1, 1], atol=1e-5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_quadratic_reaches_gradient_tolerance(seed):
    f, x_star = quadratic(seed=seed)
    # disable the loss-change stop so the gradient criterion is what ends the run
    cfg = LbfgsConfig(loss_change_tolerance=1e-30)
    x, trace = lbfgs_minimize(f, np.zeros(10), cfg)
    assert trace.termination_reason == "grad_tol"
    assert len(trace) <= 30
    assert np.max(np.abs(f(x)[1])) <= 1e-9
    np.testing.assert_allclose(x, x_star, atol=1e-8)


def test_quadratic_default_config_stops_near_minimum():
    f, x_star = quadratic(seed=4)
    x, trace = lbfgs_minimize(f, np.zeros(10))
    assert trace.termination_reason in ("grad_tol", "loss_tol")
    assert f(x)[0] <= 1e-10


def test_stationary_start_stops_immediately():
    x, trace = lbfgs_minimize(lambda x: (float(x @ x), 2 * x), np.zeros(3))
    assert len(trace) == 0 and trace.termination_reason == "grad_tol"


def test_accepted_steps_satisfy_strong_wolfe_and_descend():
    cfg = LbfgsConfig()
    xs = [np.array([-1.2, 1.0])]
    _, trace = lbfgs_minimize(rosenbrock, xs[0], cfg,
                              callback=lambda it, x, fx: xs.append(x.copy()))
    assert len(trace) > 5
    for (x0, x1), alpha in zip(zip(xs[:-1], xs[1:]), trace.step_length):
        f0, g0 = rosenbrock(x0)
        f1, g1 = rosenbrock(x1)
        d = (x1 - x0) / alpha
        assert f1 <= f0 + cfg.wolfe_c1 * alpha * (g0 @ d) + 1e-15
        assert abs(g1 @ d) <= cfg.wolfe_c2 * abs(g0 @ d) + 1e-12
    assert all(b <= a for a, b in zip(trace.loss[:-1], trace.loss[1:]))


def test_curvature_guard():
    assert curvature_pair_ok(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    assert not curvature_pair_ok(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert not curvature_pair_ok(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert not curvature_pair_ok(np.array([1.0, 0.0]), np.array([1e-12, 1.0]))


def test_max_iter_and_trace_csv(tmp_path):
    x, trace = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iterations=4))
    assert trace.termination_reason == "max_iter" and len(trace) == 4
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,grad_norm,step_length" and len(lines) == 5


def test_wrong_gradient_ends_in_line_search_failure():
    def bad(x):
        return float(x @ x), -2 * x  # ascent direction claimed as gradient

    _, trace = lbfgs_minimize(bad, np.ones(2))
    assert trace.termination_reason == "line_search_failure"


def test_non_finite_start_aborts():
    with pytest.raises(OptimizationAborted):
        lbfgs_minimize(lambda x: (np.nan, x), np.ones(2))


def test_config_validation():
    with pytest.raises(ValueError):
        LbfgsConfig(wolfe_c1=0.9, wolfe_c2=0.1)
    with pytest.raises(ValueError):
        LbfgsConfig(grad_tolerance=0)
    with pytest.raises(ValueError):
        LbfgsConfig(history_size=0)


# -- Adam ---------------------------------------------------------------------


def test_adam_on_quadratic():
    f, _ = quadratic(seed=1)
    x0 = np.zeros(10)
    x, trace = adam_minimize(f, x0, 500, lr=1e-2)
    assert f(x)[0] <= f(x0)[0] / 100
    x2, trace2 = adam_minimize(f, x0, 500, lr=1e-2)
    assert np.array_equal(x, x2) and trace.loss == trace2.loss


def test_adam_zero_gradient_keeps_theta():
    x0 = np.array([0.3, -1.0])
    x, _ = adam_minimize(lambda x: (1.0, np.zeros(2)), x0, 10)
    assert np.array_equal(x, x0)


def test_adam_aborts_on_nan():
    with pytest.raises(OptimizationAborted):
        adam_minimize(lambda x: (np.nan, x), np.ones(2), 3)


# -- PRNG ---------------------------------------------------------------------


def test_prng_basics():
    assert prng_uniform(Prng(0), 0).size == 0
    u = prng_uniform(Prng(1), 100_000)
    assert abs(u.mean() - 0.5) <= 0.01 and u.min() >= 0 and u.max() < 1
    z = prng_normal(Prng(2), 100_000)
    assert abs(z.std() - 1) <= 0.02 and abs(z.mean()) <= 0.01


def test_prng_streams_are_deterministic_and_independent():
    assert np.array_equal(Prng(7, 1).uniform(5), Prng(7, 1).uniform(5))
    assert not np.array_equal(Prng(7, 1).uniform(5), Prng(7, 2).uniform(5))
    assert not np.array_equal(Prng(7, 1).uniform(5), Prng(8, 1).uniform(5))
    with pytest.raises(ValueError):
        Prng(-1)
