import csv

import numpy as np
import pytest

from pinnproj import harness
from pinnproj.datagen import SamplingPlan, generate
from pinnproj.harness import (ExperimentConfig, TrialResult, UndefinedMetricError, aggregate,
                              build_problem, error_c, error_u, predict_c_series, run_experiment,
                              run_trial)
from pinnproj.model import MlpArchitecture, init_xavier_normal
from pinnproj.optim import LbfgsConfig, OptimizationAborted, OptimTrace
from pinnproj.physics import ConfigurationError


@pytest.fixture(scope="module")
def burgers():
    return generate("burgers")


def small_cfg(**kw):
    base = dict(optimizer=LbfgsConfig(max_iterations=10),
                sampling=SamplingPlan(n_train=20, n_collocation=200), trials=1)
    base.update(kw)
    return ExperimentConfig(**base)


# -- metrics ------------------------------------------------------------------


def test_error_u_examples():
    u = np.random.default_rng(0).normal(size=(100, 256))
    assert error_u(u, u) == 0
    assert error_u(2 * u, u) == pytest.approx(1.0, rel=1e-15)
    v = u.copy()
    v[3, 7] += 0.01
    assert error_u(v, u) == pytest.approx(0.01 / np.linalg.norm(u), rel=1e-10)
    with pytest.raises(UndefinedMetricError):
        error_u(u, np.zeros_like(u))
    with pytest.raises(ValueError):
        error_u(u[:5], u)


def test_error_c_examples():
    assert error_c(np.full(100, 0.3), 0.3) == 0
    c = np.zeros(100)
    c[42] = -2e-3
    assert error_c(c, 0.0) == 2e-3
    assert error_c(np.full(100, 1.65e-7), 0.0) == pytest.approx(1.65e-6, rel=1e-12)


def test_c_series(burgers):
    arch = MlpArchitecture(input_bounds=burgers.bounds)
    theta = init_xavier_normal(arch, 0).values
    proj = predict_c_series(theta, arch, burgers, "pinn_proj")
    assert proj.shape == (100,)
    assert np.max(np.abs(proj - burgers.c_true)) <= 1e-10
    raw = predict_c_series(theta, arch, burgers, "pinn")
    assert np.max(np.abs(raw - burgers.c_true)) > 1e-6
    assert not np.any(predict_c_series(np.zeros(arch.n_params), arch, burgers, "pinn"))


# -- config ----------------------------------------------------------------------


def test_config_from_text():
    cfg = ExperimentConfig.from_text("""
        # comment
        datasets = burgers, kdv
        variants = pinn_proj
        trials = 2
        base_seed = 10
        max_iterations = 50   # optimizer key
        n_collocation = 500
        precision = f32
        proj_output_only = yes
        round_grid = 5
    """)
    assert cfg.datasets == ["burgers", "kdv"] and cfg.variants == ["pinn_proj"]
    assert (cfg.trials, cfg.base_seed, cfg.precision) == (2, 10, "f32")
    assert cfg.optimizer.max_iterations == 50 and cfg.sampling.n_collocation == 500
    assert cfg.proj_output_only and cfg.round_grid == 5
    assert ExperimentConfig.from_text("").optimizer.max_iterations == harness.DESK_MAX_ITERATIONS


@pytest.mark.parametrize("text", ["colour = red", "trials = 0", "variants = pinn_x",
                                  "trials = 1\ntrials = 2", "full_jet = maybe", "trials",
                                  "precision = f16", "trials = two"])
def test_config_errors(text):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text(text)


# -- trials ----------------------------------------------------------------------


def test_problem_streams_are_seeded(burgers):
    cfg = small_cfg()
    a, b, c = build_problem(cfg, burgers, 0), build_problem(cfg, burgers, 0), build_problem(cfg, burgers, 1)
    assert np.array_equal(a.theta0, b.theta0) and np.array_equal(a.colloc.points, b.colloc.points)
    assert not np.array_equal(a.train.points, c.train.points)
    assert not np.array_equal(a.colloc.points, c.colloc.points)
    assert np.all(np.isin(a.colloc.points[:, 1], burgers.ts))
    assert a.soft_times.size <= harness.MAX_SOFT_TIMES


@pytest.mark.parametrize("variant", ["pinn", "pinn_sc", "pinn_proj"])
def test_short_trial_is_finite_and_deterministic(burgers, variant):
    cfg = small_cfg()
    r1, p1 = run_trial(cfg, burgers, variant, 0)
    r2, p2 = run_trial(cfg, burgers, variant, 0)
    assert r1.ok and 0 < r1.iterations <= 10
    assert np.isfinite(r1.error_u) and np.isfinite(r1.error_c) and r1.error_c >= 0
    assert np.array_equal(p1.values, p2.values)
    row1, row2 = r1.row(), r2.row()
    row1.pop("wall_time"), row2.pop("wall_time")
    assert row1 == row2
    if variant == "pinn_proj":
        assert r1.error_c <= 1e-8


def test_f32_trial(burgers):
    r, _ = run_trial(small_cfg(precision="f32"), burgers, "pinn_proj", 0)
    assert r.ok and 1e-9 < r.error_c < 1e-4


def test_aborted_trial_is_flagged(burgers, monkeypatch):
    def boom(objective, theta0, cfg):
        raise OptimizationAborted("non-finite loss", OptimTrace())

    monkeypatch.setattr(harness, "lbfgs_minimize", boom)
    r, _ = run_trial(small_cfg(), burgers, "pinn", 0)
    assert r.status == "failed" and not r.ok and np.isnan(r.error_u)


# -- reports ---------------------------------------------------------------------


def _row(d, v, k, eu, ec, status="ok"):
    return TrialResult(v, d, k, k, eu, ec, status=status).row()


def test_aggregate_means_and_exclusion():
    rows = [_row("burgers", "pinn", 0, 1e-3, 1.0), _row("burgers", "pinn", 1, 3e-3, 3.0),
            _row("burgers", "pinn", 2, 9.0, 9.0, status="failed"),
            _row("burgers", "pinn_proj", 0, 0.5, 1e-15)]
    header, table = aggregate(rows)
    assert header == ["dataset", "pinn_error_u", "pinn_error_c", "pinn_proj_error_u",
                      "pinn_proj_error_c"]
    assert len(table) == 1
    assert table[0]["pinn_error_u"] == pytest.approx(2e-3, rel=1e-15)
    assert table[0]["pinn_error_c"] == 2.0
    assert table[0]["pinn_proj_error_c"] == 1e-15


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_experiment_outputs(tmp_path):
    cfg = small_cfg(datasets=["advection"], variants=["pinn_proj"],
                    optimizer=LbfgsConfig(max_iterations=3))
    s1 = run_experiment(cfg, tmp_path / "a")
    s2 = run_experiment(cfg, tmp_path / "b")
    assert s1["n_failed"] == 0 and s1["seeds"] == [0]
    agg = _read(tmp_path / "a" / "aggregate.csv")
    assert len(agg) == 2 and agg[1][0] == "advection"
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()
    t1, t2 = _read(tmp_path / "a" / "trials.csv"), _read(tmp_path / "b" / "trials.csv")
    wall = t1[0].index("wall_time")
    assert [r[:wall] + r[wall + 1:] for r in t1] == [r[:wall] + r[wall + 1:] for r in t2]
    series = _read(tmp_path / "a" / "c_series_advection_pinn_proj_0.csv")
    assert series[0] == ["t_index", "t", "c_pred", "abs_err"] and len(series) == 101
    assert max(float(r[3]) for r in series[1:]) <= 1e-10
    assert (tmp_path / "a" / "models" / "advection_pinn_proj_0.txt").is_file()


def test_dataset_listed_twice_is_an_error(tmp_path):
    cfg = small_cfg(datasets=["advection", "advection"], variants=["pinn"],
                    optimizer=LbfgsConfig(max_iterations=1))
    with pytest.raises(ConfigurationError):
        run_experiment(cfg, tmp_path)
