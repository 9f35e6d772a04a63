"""Periodic reference datasets, point sampling and the dataset text format."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optim import Prng
from .physics import PdeSpec, QuadratureGrid, momentum

log = logging.getLogger(__name__)

NX = 256
NT = 100
FORMAT_TAG = "#conserved-pinn-dataset v1"


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetDimensionError(DatasetFormatError):
    pass


class SamplingError(ValueError):
    pass


@dataclass
class Dataset:
    """Reference solution on an ``nt x nx`` grid (rows are time slices)."""

    pde: PdeSpec
    xs: np.ndarray
    ts: np.ndarray
    u: np.ndarray
    c_true: float
    bounds: tuple  # x_min, x_max (period end), t_min, t_max

    @property
    def nx(self):
        return self.xs.size

    @property
    def nt(self):
        return self.ts.size

    def grid(self) -> QuadratureGrid:
        return QuadratureGrid.from_bounds(self.xs, self.bounds[0], self.bounds[1])

    def momentum_series(self) -> np.ndarray:
        g = self.grid()
        return np.array([momentum(row, g) for row in self.u])

    def max_momentum_drift(self) -> float:
        return float(np.max(np.abs(self.momentum_series() - self.c_true)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.pde == other.pde and np.array_equal(self.xs, other.xs)
                and np.array_equal(self.ts, other.ts) and np.array_equal(self.u, other.u)
                and self.c_true == other.c_true and tuple(self.bounds) == tuple(other.bounds))


@dataclass
class SamplingPlan:
    n_train: int = 100
    n_collocation: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_train <= NX * NT:
            raise SamplingError(f"n_train must be in [1, {NX * NT}]")
        if self.n_collocation < 1:
            raise SamplingError("n_collocation must be positive")


def _finish(pde, xs, ts, u, bounds, round_grid):
    if not np.all(np.isfinite(u)):
        raise GenerationError(f"{pde.kind}: non-finite values in generated state")
    if round_grid is not None:
        xs = np.round(xs, round_grid)
        ts = np.round(ts, round_grid)
    ds = Dataset(pde, xs, ts, u, 0.0, tuple(float(b) for b in bounds))
    ds.c_true = float(np.mean(ds.momentum_series()))
    return ds


def _periodic_grid(x_min, length, nx):
    return x_min + length * np.arange(nx) / nx


def gen_advection(beta: float = 0.1, ic=None, nx: int = NX, ts=None,
                  domain=(0.0, 1.0, 0.0, 1.0), round_grid=None) -> Dataset:
    """Exact transport ``u(x, t) = u0((x - beta t) mod L)``; default ``u0 = sin(2 pi x)``.

    Shifts that land on whole grid cells are realised as exact rolls of the
    initial row.
    """
    x_min, x_max, t_min, t_max = domain
    length = x_max - x_min
    xs = _periodic_grid(x_min, length, nx)
    ts = np.linspace(t_min, t_max, NT) if ts is None else np.asarray(ts, dtype=float)
    if ic is None:
        ic = lambda x: np.sin(2 * np.pi * (x - x_min) / length)  # noqa: E731
    u0 = np.asarray(ic(xs), dtype=float)
    if abs(np.sum(u0)) > 1e-10 * max(1.0, np.sum(np.abs(u0))):
        raise GenerationError("advection initial condition must have zero grid mean")
    dx = length / nx
    u = np.empty((ts.size, nx))
    for k, t in enumerate(ts):
        cells = beta * (t - t_min) / dx
        if abs(cells - round(cells)) <= 1e-9 * max(1.0, abs(cells)):
            u[k] = np.roll(u0, int(round(cells)))
        else:
            u[k] = ic(x_min + np.mod(xs - x_min - beta * (t - t_min), length))
    return _finish(PdeSpec("advection", beta=beta), xs, ts, u, domain, round_grid)


def _wavenumbers(nx, length):
    return 2 * np.pi * np.fft.rfftfreq(nx, d=length / nx)


def _dealias_mask(k):
    kmax = np.max(np.abs(k))
    return (np.abs(k) <= (2.0 / 3.0) * kmax).astype(float)


def gen_burgers(nu: float = 0.1, ic=None, nx: int = NX, domain=(-1.0, 1.0, 0.0, 1.0),
                dt: float | None = None, round_grid=None) -> Dataset:
    """Viscous Burgers by Fourier collocation and classical RK4.

    The flux ``u^2 / 2`` is differentiated spectrally (2/3-rule dealiased), so
    the zero mode, and therefore total momentum, is untouched by the scheme.
    """
    x_min, x_max, t_min, t_max = domain
    length = x_max - x_min
    xs = _periodic_grid(x_min, length, nx)
    ts = np.linspace(t_min, t_max, NT)
    u0 = -np.sin(np.pi * xs) if ic is None else np.asarray(ic(xs), dtype=float)
    k = _wavenumbers(nx, length)
    ik = 1j * k
    if nx % 2 == 0:
        ik[-1] = 0.0  # odd derivative of the Nyquist mode
    mask = _dealias_mask(k)
    lin = -nu * k**2

    def rhs(v):
        w = np.fft.irfft(v * mask, n=nx)
        return -0.5 * ik * np.fft.rfft(w * w) * mask + lin * v

    # RK4 stability: |lambda dt| <= 2.78 on the negative real axis; the
    # advective part is bounded by max|u| k_max
    kmax = np.max(k)
    umax = max(np.max(np.abs(u0)), 1e-12)
    stable = 2.5 / (nu * kmax**2 + umax * kmax)
    frame = (t_max - t_min) / (NT - 1)
    if dt is None:
        dt = stable
    if dt > stable * 1.1:
        raise GenerationError(f"burgers: dt={dt:.3g} exceeds the RK4 stability bound {stable:.3g}")
    return _integrate("burgers", PdeSpec("burgers", nu=nu), rhs, None, u0, xs, ts, frame, dt,
                      domain, round_grid)


def gen_kdv(lambda1: float = 1.0, lambda2: float = 0.0025, ic=None, nx: int = NX,
            domain=(-1.0, 1.0, 0.0, 1.0), dt: float | None = None, round_grid=None) -> Dataset:
    """KdV by Fourier collocation and ETDRK4 on the dispersive linear part."""
    x_min, x_max, t_min, t_max = domain
    length = x_max - x_min
    xs = _periodic_grid(x_min, length, nx)
    ts = np.linspace(t_min, t_max, NT)
    u0 = np.cos(np.pi * xs) if ic is None else np.asarray(ic(xs), dtype=float)
    k = _wavenumbers(nx, length)
    ik = 1j * k
    if nx % 2 == 0:
        ik[-1] = 0.0
    mask = _dealias_mask(k)
    lin = 1j * lambda2 * k**3  # -lambda2 * (ik)^3

    def nonlinear(v):
        w = np.fft.irfft(v * mask, n=nx)
        return -0.5 * lambda1 * ik * np.fft.rfft(w * w) * mask

    frame = (t_max - t_min) / (NT - 1)
    if dt is None:
        dt = 2e-4
    umax = max(np.max(np.abs(u0)), 1e-12)
    if lambda1 * umax * np.max(k) * dt > 2.5:
        raise GenerationError(f"kdv: dt={dt:.3g} violates the advective CFL bound")
    return _integrate("kdv", PdeSpec("kdv", lambda1=lambda1, lambda2=lambda2), nonlinear, lin,
                      u0, xs, ts, frame, dt, domain, round_grid)


def _etdrk4_coefficients(L, h, n_roots=32):
    """Kassam-Trefethen contour-integral evaluation of the phi functions."""
    E = np.exp(h * L)
    E2 = np.exp(h * L / 2)
    # full circle: the linear operator is complex
    r = np.exp(2j * np.pi * (np.arange(1, n_roots + 1) - 0.5) / n_roots)
    LR = h * L[:, None] + r[None, :]
    Q = h * np.mean((np.exp(LR / 2) - 1) / LR, axis=1)
    f1 = h * np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR**2)) / LR**3, axis=1)
    f2 = h * np.mean((2 + LR + np.exp(LR) * (LR - 2)) / LR**3, axis=1)
    f3 = h * np.mean((-4 - 3 * LR - LR**2 + np.exp(LR) * (4 - LR)) / LR**3, axis=1)
    return E, E2, Q, f1, f2, f3


def _integrate(name, pde, rhs, lin, u0, xs, ts, frame, dt, domain, round_grid):
    steps_per_frame = max(1, int(np.ceil(frame / dt - 1e-9)))
    h = frame / steps_per_frame
    v = np.fft.rfft(u0)
    out = np.empty((ts.size, xs.size))
    out[0] = u0
    if lin is None:
        def step(v):
            k1 = rhs(v)
            k2 = rhs(v + 0.5 * h * k1)
            k3 = rhs(v + 0.5 * h * k2)
            k4 = rhs(v + h * k3)
            return v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        E, E2, Q, f1, f2, f3 = _etdrk4_coefficients(lin, h)

        def step(v):
            Nv = rhs(v)
            a = E2 * v + Q * Nv
            Na = rhs(a)
            b = E2 * v + Q * Na
            Nb = rhs(b)
            c = E2 * a + Q * (2 * Nb - Nv)
            Nc = rhs(c)
            return E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3

    n = 0
    for j in range(1, ts.size):
        for _ in range(steps_per_frame):
            v = step(v)
            n += 1
            if not np.all(np.isfinite(v)):
                raise GenerationError(f"{name}: non-finite state at inner step {n} (t={n * h:.6g})")
        out[j] = np.fft.irfft(v, n=xs.size)
    log.debug("%s: %d inner steps of %.3g", name, n, h)
    return _finish(pde, xs, ts, out, domain, round_grid)


def generate(kind: str, round_grid=None, **kwargs) -> Dataset:
    gens = {"advection": gen_advection, "burgers": gen_burgers, "kdv": gen_kdv}
    if kind not in gens:
        raise ValueError(f"unknown pde {kind!r}; expected one of {sorted(gens)}")
    return gens[kind](round_grid=round_grid, **kwargs)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def lhs_sample(n: int, rect, seed) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``rect = (x_min, x_max, t_min, t_max)``.

    Returns an ``(n, 2)`` array; each axis has exactly one point per stratum.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    prng = seed if isinstance(seed, Prng) else Prng(seed)
    x_min, x_max, t_min, t_max = rect
    cols = []
    for lo, hi in ((x_min, x_max), (t_min, t_max)):
        strata = prng.permutation(n)
        u = (strata + prng.uniform(n)) / n
        cols.append(lo + (hi - lo) * np.minimum(u, np.nextafter(1.0, 0.0)))
    return np.column_stack(cols)


def snap_times(points: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Move each point's time to the nearest value of ``ts``."""
    ts = np.asarray(ts)
    idx = np.clip(np.searchsorted(ts, points[:, 1]), 1, ts.size - 1)
    left = ts[idx - 1]
    right = ts[idx]
    nearest = np.where(points[:, 1] - left <= right - points[:, 1], left, right)
    out = points.copy()
    out[:, 1] = nearest
    return out


def sample_training_points(ds: Dataset, n: int = 100, seed=0) -> np.ndarray:
    """``n`` distinct grid entries as rows ``(x, t, u)``, uniform without replacement."""
    total = ds.u.size
    if not 1 <= n <= total:
        raise SamplingError(f"cannot draw {n} training points from {total} grid values")
    prng = seed if isinstance(seed, Prng) else Prng(seed)
    flat = np.sort(prng.choice(total, n))
    it, ix = np.divmod(flat, ds.nx)
    return np.column_stack([ds.xs[ix], ds.ts[it], ds.u[it, ix]])


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_dataset(ds: Dataset, path) -> None:
    p = ds.pde
    x_min, x_max, t_min, t_max = ds.bounds
    lines = [
        FORMAT_TAG,
        f"pde={p.kind}",
        f"beta={_fmt(p.beta)} nu={_fmt(p.nu)} lambda1={_fmt(p.lambda1)} lambda2={_fmt(p.lambda2)}",
        f"nx={ds.nx} nt={ds.nt}",
        f"x_min={_fmt(x_min)} x_max={_fmt(x_max)} t_min={_fmt(t_min)} t_max={_fmt(t_max)}",
        f"c_true={_fmt(ds.c_true)}",
        "x: " + ",".join(_fmt(v) for v in ds.xs),
        "t: " + ",".join(_fmt(v) for v in ds.ts),
        "u:",
    ]
    lines += [",".join(_fmt(v) for v in row) for row in ds.u]
    Path(path).write_text("\n".join(lines) + "\n")


_HEADER_KEYS = [
    ("pde",),
    ("beta", "nu", "lambda1", "lambda2"),
    ("nx", "nt"),
    ("x_min", "x_max", "t_min", "t_max"),
    ("c_true",),
]


def _parse_reals(text, lineno, what):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise DatasetFormatError(f"non-numeric value in {what}", lineno) from None


def read_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != FORMAT_TAG:
        raise DatasetFormatError(f"missing format tag {FORMAT_TAG!r}", 1)
    header = {}
    for offset, keys in enumerate(_HEADER_KEYS):
        lineno = offset + 2
        if len(lines) < lineno:
            raise DatasetFormatError(f"truncated file: missing header section {'/'.join(keys)}", lineno)
        fields = {}
        for item in lines[lineno - 1].split():
            if "=" not in item:
                raise DatasetFormatError(f"malformed header item {item!r}", lineno)
            key, value = item.split("=", 1)
            fields[key] = value
        if set(fields) != set(keys):
            unknown = sorted(set(fields) - set(keys))
            missing = sorted(set(keys) - set(fields))
            raise DatasetFormatError(f"header keys mismatch (unknown {unknown}, missing {missing})", lineno)
        header.update(fields)
    try:
        nx, nt = int(header["nx"]), int(header["nt"])
        reals = {k: float(header[k]) for k in ("beta", "nu", "lambda1", "lambda2", "x_min", "x_max",
                                               "t_min", "t_max", "c_true")}
    except ValueError as exc:
        raise DatasetFormatError(f"non-numeric header value: {exc}") from None

    sections = [("x: ", 7, nx), ("t: ", 8, nt)]
    arrays = []
    for prefix, lineno, count in sections:
        if len(lines) < lineno:
            raise DatasetFormatError(f"truncated file: missing section {prefix.strip()!r}", lineno)
        line = lines[lineno - 1]
        if not line.startswith(prefix):
            raise DatasetFormatError(f"expected section {prefix.strip()!r}", lineno)
        arr = _parse_reals(line[len(prefix):], lineno, prefix.strip())
        if arr.size != count:
            raise DatasetDimensionError(f"section {prefix.strip()!r} has {arr.size} values, expected {count}", lineno)
        arrays.append(arr)
    if len(lines) < 9 or lines[8].strip() != "u:":
        raise DatasetFormatError("truncated file: missing section 'u:'", 9)
    rows = [ln for ln in lines[9:]]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != nt:
        raise DatasetDimensionError(f"section 'u:' has {len(rows)} rows, expected nt={nt}", 10 + len(rows))
    u = np.empty((nt, nx))
    for i, row in enumerate(rows):
        vals = _parse_reals(row, 10 + i, f"u row {i}")
        if vals.size != nx:
            raise DatasetDimensionError(f"u row {i} has {vals.size} columns, expected nx={nx}", 10 + i)
        u[i] = vals
    pde = PdeSpec(header["pde"], beta=reals["beta"], nu=reals["nu"], lambda1=reals["lambda1"],
                  lambda2=reals["lambda2"])
    bounds = (reals["x_min"], reals["x_max"], reals["t_min"], reals["t_max"])
    return Dataset(pde, arrays[0], arrays[1], u, reals["c_true"], bounds)
