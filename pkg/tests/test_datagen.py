import numpy as np
import pytest

from pinnproj.datagen import (NT, NX, DatasetDimensionError, DatasetFormatError,
                              GenerationError, SamplingError, SamplingPlan, gen_advection,
                              gen_burgers, gen_kdv, generate, lhs_sample, read_dataset,
                              sample_training_points, snap_times, write_dataset)
from pinnproj.optim import Prng


@pytest.fixture(scope="module")
def datasets():
    return {k: generate(k) for k in ("advection", "burgers", "kdv")}


@pytest.mark.parametrize("kind", ["advection", "burgers", "kdv"])
def test_shape_and_conservation(datasets, kind):
    ds = datasets[kind]
    assert ds.u.shape == (NT, NX) == (100, 256)
    assert ds.max_momentum_drift() <= 1e-8
    assert abs(ds.c_true) <= 1e-8
    assert ds.ts[0] == 0 and ds.ts[-1] == 1


def test_initial_rows(datasets):
    adv, bur, kdv = datasets["advection"], datasets["burgers"], datasets["kdv"]
    np.testing.assert_array_equal(adv.u[0], np.sin(2 * np.pi * adv.xs))
    np.testing.assert_array_equal(bur.u[0], -np.sin(np.pi * bur.xs))
    np.testing.assert_array_equal(kdv.u[0], np.cos(np.pi * kdv.xs))


def test_advection_matches_transport():
    beta, dx = 0.1, 1 / 256
    ts = np.arange(NT) * dx / beta * 0.25  # every fourth frame moves one whole cell
    aligned = gen_advection(beta=beta, ts=ts)
    for k in range(0, NT, 4):
        np.testing.assert_array_equal(aligned.u[k], np.roll(aligned.u[0], k // 4))
    ds = gen_advection(beta=beta)
    X, T = np.meshgrid(ds.xs, ds.ts)
    np.testing.assert_allclose(ds.u, np.sin(2 * np.pi * (X - beta * T)), atol=1e-13)
    np.testing.assert_allclose(np.abs(ds.momentum_series()), 0, atol=1e-12)


def test_advection_rejects_non_zero_mean():
    with pytest.raises(GenerationError):
        gen_advection(ic=lambda x: 1 + np.sin(2 * np.pi * x))


def test_burgers_is_odd(datasets):
    u = datasets["burgers"].u
    mirror = (-np.arange(NX)) % NX  # x_i = -1 + i dx maps to index -i
    assert np.max(np.abs(u[:, mirror] + u)) <= 1e-7


def test_burgers_decays_at_large_viscosity():
    ds = gen_burgers(nu=1.0)
    assert np.max(np.abs(ds.u[-1])) < np.max(np.abs(ds.u[0]))


def _inner_step(frame, dt):
    return frame / np.ceil(frame / dt - 1e-9)


def test_refinement(datasets):
    frame = 1.0 / (NT - 1)
    k = 2 * np.pi * np.fft.rfftfreq(NX, d=2 / NX)
    h = _inner_step(frame, 2.5 / (0.1 * k.max() ** 2 + k.max()))  # the default step
    fine = gen_burgers(dt=h / 2)
    assert np.max(np.abs(fine.u[-1] - datasets["burgers"].u[-1])) <= 1e-6
    kdv_fine = gen_kdv(dt=_inner_step(frame, 2e-4) / 2)
    assert np.max(np.abs(kdv_fine.u[-1] - datasets["kdv"].u[-1])) <= 1e-6


def test_airy_mode_amplitudes_are_conserved():
    ds = gen_kdv(lambda1=0.0)
    a0 = np.abs(np.fft.rfft(ds.u[0]))
    for row in ds.u[1:]:
        assert np.max(np.abs(np.abs(np.fft.rfft(row)) - a0)) / NX <= 1e-8


def test_unstable_steps_are_rejected():
    with pytest.raises(GenerationError):
        gen_burgers(dt=0.1)
    with pytest.raises(GenerationError):
        gen_kdv(dt=0.1)


def test_round_grid():
    ds = generate("burgers", round_grid=5)
    assert np.array_equal(ds.xs, np.round(ds.xs, 5))
    assert np.array_equal(ds.ts, np.round(ds.ts, 5))
    assert ds.grid().dx == 2 / 256


def test_unknown_pde():
    with pytest.raises(ValueError):
        generate("heat")


# -- sampling -----------------------------------------------------------------

RECT = (-1.0, 1.0, 0.0, 1.0)


def test_lhs_strata():
    p = lhs_sample(1, RECT, 0)
    assert p.shape == (1, 2) and -1 <= p[0, 0] < 1 and 0 <= p[0, 1] < 1
    p = lhs_sample(10, RECT, 3)
    for col, (lo, hi) in zip(p.T, ((-1, 1), (0, 1))):
        counts = np.bincount(np.floor((col - lo) / (hi - lo) * 10).astype(int), minlength=10)
        assert counts.tolist() == [1] * 10
    assert np.array_equal(lhs_sample(50, RECT, 4), lhs_sample(50, RECT, 4))
    assert not np.array_equal(lhs_sample(50, RECT, 4), lhs_sample(50, RECT, 5))
    with pytest.raises(ValueError):
        lhs_sample(0, RECT, 0)


def test_lhs_large_sample_strata():
    p = lhs_sample(10_000, RECT, Prng(9, 2))
    idx = np.floor((p[:, 0] + 1) / 2 * 10_000).astype(int)
    assert np.array_equal(np.sort(idx), np.arange(10_000))


def test_snap_times():
    ts = np.linspace(0, 1, 5)
    pts = np.array([[0.0, 0.1], [0.0, 0.13], [0.5, 0.99], [0.2, 0.0]])
    assert snap_times(pts, ts)[:, 1].tolist() == [0.0, 0.25, 1.0, 0.0]


def test_training_points(datasets):
    ds = datasets["burgers"]
    pts = sample_training_points(ds, 100, 1)
    assert pts.shape == (100, 3)
    ix = np.searchsorted(ds.xs, pts[:, 0])
    it = np.searchsorted(ds.ts, pts[:, 1])
    assert np.array_equal(ds.u[it, ix], pts[:, 2])
    assert len({(a, b) for a, b in zip(ix, it)}) == 100
    assert np.array_equal(pts, sample_training_points(ds, 100, 1))
    assert not np.array_equal(pts, sample_training_points(ds, 100, 2))
    everything = sample_training_points(ds, NX * NT, 0)
    assert np.array_equal(everything[:, 2], ds.u.ravel())
    with pytest.raises(SamplingError):
        sample_training_points(ds, NX * NT + 1, 0)
    with pytest.raises(SamplingError):
        SamplingPlan(n_collocation=0)


# -- file format ----------------------------------------------------------------


def test_round_trip(tmp_path, datasets):
    for name, ds in datasets.items():
        write_dataset(ds, tmp_path / f"{name}.txt")
        assert read_dataset(tmp_path / f"{name}.txt") == ds


def test_truncated_file_names_section(tmp_path, datasets):
    p = tmp_path / "kdv.txt"
    write_dataset(datasets["kdv"], p)
    lines = p.read_text().splitlines()
    (tmp_path / "short.txt").write_text("\n".join(lines[:7]) + "\n")
    with pytest.raises(DatasetFormatError, match="missing section 't:'"):
        read_dataset(tmp_path / "short.txt")
    (tmp_path / "rows.txt").write_text("\n".join(lines[:50]) + "\n")
    with pytest.raises(DatasetDimensionError, match="rows"):
        read_dataset(tmp_path / "rows.txt")


def test_short_row_names_row_index(tmp_path, datasets):
    p = tmp_path / "b.txt"
    write_dataset(datasets["burgers"], p)
    lines = p.read_text().splitlines()
    lines[9 + 17] = ",".join(lines[9 + 17].split(",")[:255])
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetDimensionError, match="u row 17 has 255 columns") as info:
        read_dataset(p)
    assert info.value.line == 27


def test_header_is_strict(tmp_path, datasets):
    p = tmp_path / "a.txt"
    write_dataset(datasets["advection"], p)
    lines = p.read_text().splitlines()
    bad = list(lines)
    bad[5] = bad[5] + " extra=1"
    p.write_text("\n".join(bad) + "\n")
    with pytest.raises(DatasetFormatError, match="unknown"):
        read_dataset(p)
    bad = list(lines)
    bad[0] = "#conserved-pinn-dataset v2"
    p.write_text("\n".join(bad) + "\n")
    with pytest.raises(DatasetFormatError):
        read_dataset(p)
    bad = list(lines)
    bad[12] = bad[12].replace(",", ",abc,", 1)
    p.write_text("\n".join(bad) + "\n")
    with pytest.raises(DatasetFormatError, match="line 13"):
        read_dataset(p)
