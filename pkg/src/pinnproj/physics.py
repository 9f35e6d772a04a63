"""PDE residuals, momentum quadrature, the conservation projection and the
training losses built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffengine import Jet, Var, reshape, take, value_of, vmean, vsum

VARIANTS = ("pinn", "pinn_sc", "pinn_proj")
SOFT_CONSTRAINT_WEIGHT = 10.0


class ConfigurationError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class PdeSpec:
    kind: str
    beta: float = 0.1
    nu: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 0.0025

    def __post_init__(self):
        if self.kind not in ("advection", "burgers", "kdv"):
            raise ValueError(f"unknown pde kind {self.kind!r}")
        coeffs = (self.beta, self.nu, self.lambda1, self.lambda2)
        if not all(np.isfinite(c) for c in coeffs):
            raise ValueError("pde coefficients must be finite")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")

    @property
    def x_order(self) -> int:
        """Highest x-derivative the residual reads."""
        return {"advection": 1, "burgers": 2, "kdv": 3}[self.kind]


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform periodic grid; ``domain_length == count * dx``."""

    xs: np.ndarray
    dx: float
    domain_length: float

    @classmethod
    def from_bounds(cls, xs, x_min, x_max):
        xs = np.asarray(xs, dtype=float)
        length = float(x_max - x_min)
        dx = length / xs.size
        exact = x_min + dx * np.arange(xs.size)
        dev = np.max(np.abs(xs - exact)) if xs.size else 0.0
        if dev > 1e-12 * max(1.0, abs(length)) and not _is_decimal_rounding(xs, exact):
            raise ValueError(f"grid is not uniform (max deviation {dev:.3g})")
        return cls(xs, dx, length)

    def __len__(self):
        return self.xs.size


def _is_decimal_rounding(xs, exact):
    return any(np.array_equal(xs, np.round(exact, d)) for d in range(1, 13))


@dataclass(frozen=True)
class ConservedTarget:
    c: float

    def __post_init__(self):
        if not np.isfinite(self.c):
            raise ValueError("conserved target must be finite")


@dataclass
class TrainingSet:
    """Rows ``(x_u, t_u, u)``."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class CollocationSet:
    """Rows ``(x_f, t_f)``."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# pointwise physics
# ---------------------------------------------------------------------------


def residual(spec: PdeSpec, j: Jet):
    """``u_t + N[u]`` for the configured equation (structural zeros read as 0)."""
    val, dt, dx, dxx, dxxx = j.components(fill=0.0)
    if spec.kind == "advection":
        return dt + spec.beta * dx
    if spec.kind == "burgers":
        return dt + val * dx - spec.nu * dxx
    return dt + spec.lambda1 * (val * dx) + spec.lambda2 * dxxx


def momentum(u_on_grid, grid: QuadratureGrid):
    """Riemann sum ``sum_i u_i dx`` over the last axis."""
    n = np.shape(value_of(u_on_grid))[-1] if np.ndim(value_of(u_on_grid)) else 1
    if n != len(grid):
        raise DimensionError(f"field has {n} grid values, grid has {len(grid)}")
    s = vsum(u_on_grid, axis=-1)
    if isinstance(s, Var):
        return s * grid.dx
    return s * np.asarray(grid.dx, dtype=np.result_type(s))


def project(u_val, grid_momentum, target: ConservedTarget, domain_length: float):
    """Shift ``u`` so that its grid momentum becomes ``target.c``."""
    if domain_length <= 0:
        raise ValueError("domain length must be positive")
    return u_val - grid_momentum * (1.0 / domain_length) + target.c / domain_length


def project_field(u_grid, grid: QuadratureGrid, target: ConservedTarget):
    """Project every row of a ``(..., nx)`` field on ``grid``."""
    m = momentum(u_grid, grid)
    return project(u_grid, np.expand_dims(m, -1), target, grid.domain_length)


def projected_jet(j: Jet, grid_momentum, grid_momentum_dt, target: ConservedTarget,
                  domain_length: float) -> Jet:
    """Jet of the projected field; the correction depends on ``t`` only."""
    if domain_length <= 0:
        raise ValueError("domain length must be positive")
    inv = 1.0 / domain_length
    val = j.val + (target.c * inv - grid_momentum * inv)
    dt = None
    if j.dt is not None or grid_momentum_dt is not None:
        shift = -(grid_momentum_dt * inv) if grid_momentum_dt is not None else 0.0
        dt = shift if j.dt is None else j.dt + shift
    return Jet(val, dt, j.dx, j.dxx, j.dxxx)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class ProjectionContext:
    grid: QuadratureGrid
    target: ConservedTarget
    output_only: bool = False  # project predictions but not the residual


@dataclass
class MomentumTable:
    """Grid momentum (and optionally its time derivative) at distinct times."""

    times: np.ndarray
    m: object
    m_dt: object = None

    def lookup(self, t):
        idx = np.searchsorted(self.times, t)
        idx = np.clip(idx, 0, self.times.size - 1)
        if not np.array_equal(self.times[idx], t):
            raise ConfigurationError("requested time missing from momentum table")
        return idx


def momentum_table(theta, arch, grid: QuadratureGrid, times, with_dt: bool = True) -> MomentumTable:
    from .model import forward_points

    times = np.unique(np.asarray(times, dtype=float))
    nx = len(grid)
    x = np.tile(grid.xs, times.size)
    t = np.repeat(times, nx)
    j = forward_points(theta, arch, x, t, x_order=0, t_order=1 if with_dt else 0)
    m = momentum(reshape(j.val, (times.size, nx)), grid)
    m_dt = momentum(reshape(j.dt, (times.size, nx)), grid) if with_dt else None
    return MomentumTable(times, m, m_dt)


def _require(n, what):
    if n == 0:
        raise ConfigurationError(f"{what} is empty")


def loss_data(theta, arch, train: TrainingSet, projection: ProjectionContext | None = None,
              table: MomentumTable | None = None):
    """Mean squared error between (optionally projected) predictions and data."""
    from .model import forward_points

    _require(len(train), "training set")
    x, t, u = train.points.T
    pred = forward_points(theta, arch, x, t, x_order=0, t_order=0).val
    if projection is not None:
        if table is None:
            table = momentum_table(theta, arch, projection.grid, t, with_dt=False)
        m = take(table.m, table.lookup(t))
        pred = project(pred, m, projection.target, projection.grid.domain_length)
    err = pred - u.astype(value_of(pred).dtype)
    return vmean(err * err)


def loss_physics(theta, arch, colloc: CollocationSet, spec: PdeSpec,
                 projection: ProjectionContext | None = None, table: MomentumTable | None = None,
                 x_order: int | None = None):
    """Mean squared residual at the collocation points.

    ``x_order`` defaults to what ``spec`` needs; pass 3 to always carry the
    full jet.
    """
    from .model import forward_points

    _require(len(colloc), "collocation set")
    x, t = colloc.points.T
    j = forward_points(theta, arch, x, t, x_order=spec.x_order if x_order is None else x_order)
    if projection is not None and not projection.output_only:
        if table is None or table.m_dt is None:
            table = momentum_table(theta, arch, projection.grid, t, with_dt=True)
        idx = table.lookup(t)
        j = projected_jet(j, take(table.m, idx), take(table.m_dt, idx), projection.target,
                          projection.grid.domain_length)
    f = residual(spec, j)
    return vmean(f * f)


def loss_soft_constraint(theta, arch, grid: QuadratureGrid, times, target: ConservedTarget,
                         weight: float = SOFT_CONSTRAINT_WEIGHT, table: MomentumTable | None = None):
    """``weight * mean_t (momentum(u(., t)) - c)^2``."""
    times = np.asarray(times, dtype=float)
    _require(times.size, "soft-constraint time set")
    if table is None:
        table = momentum_table(theta, arch, grid, times, with_dt=False)
    m = take(table.m, table.lookup(np.unique(times)))
    d = m - target.c
    return vmean(d * d) * weight


def loss_total(variant: str, theta, arch, train: TrainingSet, colloc: CollocationSet,
               spec: PdeSpec, grid: QuadratureGrid | None = None,
               target: ConservedTarget | None = None, soft_times=None,
               proj_output_only: bool = False, x_order: int | None = None):
    """Training objective of one model variant.

    ``pinn`` ignores ``grid``/``target``; ``pinn_sc`` needs all three of
    ``grid``, ``target`` and ``soft_times``; ``pinn_proj`` needs ``grid`` and
    ``target``.
    """
    if variant == "pinn":
        return (loss_data(theta, arch, train)
                + loss_physics(theta, arch, colloc, spec, x_order=x_order))
    if variant == "pinn_sc":
        if grid is None or target is None or soft_times is None:
            raise ConfigurationError("pinn_sc needs grid, target and soft_times")
        return (loss_data(theta, arch, train)
                + loss_physics(theta, arch, colloc, spec, x_order=x_order)
                + loss_soft_constraint(theta, arch, grid, soft_times, target))
    if variant == "pinn_proj":
        if grid is None or target is None:
            raise ConfigurationError("pinn_proj needs grid and target")
        if soft_times is not None:
            raise ConfigurationError("pinn_proj takes no soft-constraint times")
        ctx = ProjectionContext(grid, target, proj_output_only)
        t_train = train.points[:, 1]
        if proj_output_only:
            table = momentum_table(theta, arch, grid, t_train, with_dt=False)
        else:
            table = momentum_table(theta, arch, grid,
                                   np.concatenate([t_train, colloc.points[:, 1]]), with_dt=True)
        return (loss_data(theta, arch, train, ctx, table)
                + loss_physics(theta, arch, colloc, spec, ctx, table, x_order=x_order))
    raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
