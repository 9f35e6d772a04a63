"""Truncated Taylor jets for input derivatives and a reverse-mode tape for
parameter gradients.

A :class:`Jet` carries ``(val, dt, dx, dxx, dxxx)`` of a field at one or many
points.  Components may be Python floats, numpy arrays (vectorised over
points) or :class:`Var` nodes recorded on a :class:`Tape`.  Running the same
jet arithmetic on ``Var`` components records every component operation, so a
single reverse sweep yields the gradient of any scalar loss built from jets.

A component set to ``None`` is a structural zero: it is never materialised
and is skipped by every rule.  This lets callers truncate the jet (e.g. only
``val`` and ``dt`` for quadrature evaluations).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Jet",
    "Tape",
    "Var",
    "TrainingDivergenceError",
    "jet_seed",
    "jet_add",
    "jet_sub",
    "jet_mul",
    "jet_scale",
    "jet_tanh",
    "tanh",
    "matmul",
    "vsum",
    "vmean",
    "take",
    "reshape",
    "grad",
    "fd_check",
    "value_of",
]


class TrainingDivergenceError(FloatingPointError):
    """Raised when a recorded objective evaluates to a non-finite value."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Tape:
    """Append-only record of array operations.

    Every node stores its operand indices, an op name, a forward function
    (used by :meth:`replay`) and a vector-Jacobian function per operand.
    Nodes are appended in evaluation order, so the list is topologically
    sorted by construction.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        return Var(np.asarray(value), self, "leaf", (), None, ())

    def backward(self, root: "Var") -> dict[int, np.ndarray]:
        """Reverse sweep from ``root``; returns adjoints keyed by node index."""
        if root.tape is not self:
            raise ValueError("root belongs to another tape")
        adj: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
        owned: set[int] = set()  # adjoints allocated here, safe to update in place
        for node in reversed(self.nodes[: root.index + 1]):
            if not node.parents:
                continue
            g = adj.pop(node.index, None)
            if g is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                gp = vjp(g)
                k = parent.index
                prev = adj.get(k)
                if prev is None:
                    adj[k] = gp
                elif k in owned and prev.shape == gp.shape:
                    prev += gp
                else:
                    adj[k] = prev + gp
                    owned.add(k)
        return adj

    def replay(self):
        """Recompute every node value from the recorded ops; returns all values."""
        values: list = [None] * len(self.nodes)
        for node in self.nodes:
            if node.op == "leaf":
                values[node.index] = node.value
            else:
                args = [values[p.index] for p in node.parents]
                values[node.index] = node.forward(*args)
        return values


class Var:
    """Array-valued node on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index", "op", "forward", "parents", "vjps")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, tape, op, parents, forward, vjps):
        self.value = value
        self.tape = tape
        self.op = op
        self.parents = parents
        self.forward = forward
        self.vjps = vjps
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg(other))

    def __rsub__(self, other):
        if isinstance(other, Var):
            return _add(other, _neg(self))
        c = other
        sa = self.shape
        return Var(c - self.value, self.tape, "rsub_const", (self,), lambda x: c - x,
                   (lambda g: _unbroadcast(-g, sa),))

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return _neg(self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a recorded value is not supported")
        return _mul(self, 1.0 / other)

    def __getitem__(self, key):
        v = self.value
        shape = v.shape

        def vjp(g, key=key, shape=shape, dtype=v.dtype):
            out = np.zeros(shape, dtype=dtype)
            out[key] = g
            return out

        return Var(v[key], self.tape, "getitem", (self,), lambda a: a[key], (vjp,))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _add(a, b):
    if not isinstance(a, Var):
        a, b = b, a
    if not isinstance(b, Var):
        c = b
        return Var(a.value + c, a.tape, "add_const", (a,), lambda x: x + c,
                   (lambda g, s=a.shape: _unbroadcast(g, s),))
    sa, sb = a.shape, b.shape
    return Var(a.value + b.value, a.tape, "add", (a, b), np.add,
               (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)))


def _neg(a):
    if not isinstance(a, Var):
        return -a
    return Var(-a.value, a.tape, "neg", (a,), np.negative, (np.negative,))


def _mul(a, b):
    if not isinstance(a, Var):
        a, b = b, a
    if not isinstance(b, Var):
        c = b
        sa = a.shape
        return Var(a.value * c, a.tape, "mul_const", (a,), lambda x: x * c,
                   (lambda g: _unbroadcast(g * c, sa),))
    av, bv = a.value, b.value
    sa, sb = a.shape, b.shape
    return Var(av * bv, a.tape, "mul", (a, b), np.multiply,
               (lambda g: _unbroadcast(g * bv, sa), lambda g: _unbroadcast(g * av, sb)))


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    y = np.tanh(a.value)

    def vjp(g):
        d = y * y
        np.subtract(1.0, d, out=d)
        d *= g
        return d

    return Var(y, a.tape, "tanh", (a,), np.tanh, (vjp,))


def matmul(a, b):
    """``a @ b`` for 2-D operands; either side may be a :class:`Var`."""
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a @ b
    tape = a.tape if isinstance(a, Var) else b.tape
    av = a.value if isinstance(a, Var) else a
    bv = b.value if isinstance(b, Var) else b
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a)
        vjps.append(lambda g: g @ bv.T)
    if isinstance(b, Var):
        parents.append(b)
        vjps.append(lambda g: av.T @ g)
    if isinstance(a, Var) and isinstance(b, Var):
        fwd = np.matmul
    elif isinstance(a, Var):
        fwd = lambda x: x @ bv  # noqa: E731
    else:
        fwd = lambda y: av @ y  # noqa: E731
    return Var(av @ bv, tape, "matmul", tuple(parents), fwd, tuple(vjps))


def vsum(a, axis=None):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis)
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Var(np.asarray(np.sum(a.value, axis=axis)), a.tape, "sum", (a,),
               lambda x: np.asarray(np.sum(x, axis=axis)), (vjp,))


def vmean(a, axis=None):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return vsum(a, axis) * (1.0 / n)


def take(a, indices):
    """Gather rows ``a[indices]`` along axis 0."""
    if not isinstance(a, Var):
        return np.take(a, indices, axis=0)
    idx = np.asarray(indices)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return out

    return Var(np.take(a.value, idx, axis=0), a.tape, "take", (a,),
               lambda x: np.take(x, idx, axis=0), (vjp,))


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.shape
    return Var(np.reshape(a.value, shape), a.tape, "reshape", (a,),
               lambda x: np.reshape(x, shape), (lambda g: np.reshape(g, old),))


def value_of(a):
    """Plain numeric value of a float, array or :class:`Var`."""
    return a.value if isinstance(a, Var) else a


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------


def _opt_add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _opt_mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _opt_scale(a, k):
    return None if a is None else a * k


@dataclass
class Jet:
    """Value of a field and its ``t``, ``x``, ``xx`` and ``xxx`` derivatives.

    No mixed partials are tracked.
    """

    val: object
    dt: object = None
    dx: object = None
    dxx: object = None
    dxxx: object = None

    COMPONENTS = ("val", "dt", "dx", "dxx", "dxxx")

    def components(self, fill=0.0):
        """All five components with structural zeros replaced by ``fill``."""
        return tuple(fill if c is None else c for c in
                     (self.val, self.dt, self.dx, self.dxx, self.dxxx))

    def values(self):
        """The same jet with :class:`Var` components replaced by their values."""
        return Jet(*(None if c is None else value_of(c) for c in
                     (self.val, self.dt, self.dx, self.dxx, self.dxxx)))

    def __add__(self, other):
        return jet_add(self, other)

    def __sub__(self, other):
        return jet_sub(self, other)

    def __mul__(self, other):
        return jet_mul(self, other)

    def __iter__(self):
        return iter(self.components())


def jet_seed(x, t=None, kind="constant"):
    """Seed a jet.

    ``kind="variable_x"`` seeds ``x`` with ``dx = 1``; ``"variable_t"`` seeds
    the time value (``t`` if given, else the first argument) with ``dt = 1``;
    ``"constant"`` seeds the first argument with all derivatives zero.
    """
    if kind == "variable_x":
        return Jet(x, 0.0, 1.0, 0.0, 0.0)
    if kind == "variable_t":
        return Jet(x if t is None else t, 1.0, 0.0, 0.0, 0.0)
    if kind == "constant":
        return Jet(x, 0.0, 0.0, 0.0, 0.0)
    raise ValueError(f"unknown seed kind {kind!r}")


def _as_jet(b):
    return b if isinstance(b, Jet) else Jet(b)


def jet_add(a: Jet, b) -> Jet:
    b = _as_jet(b)
    return Jet(a.val + b.val, _opt_add(a.dt, b.dt), _opt_add(a.dx, b.dx),
               _opt_add(a.dxx, b.dxx), _opt_add(a.dxxx, b.dxxx))


def jet_sub(a: Jet, b) -> Jet:
    return jet_add(a, jet_scale(_as_jet(b), -1.0))


def jet_scale(a: Jet, k) -> Jet:
    return Jet(a.val * k, _opt_scale(a.dt, k), _opt_scale(a.dx, k),
               _opt_scale(a.dxx, k), _opt_scale(a.dxxx, k))


def jet_mul(f: Jet, g) -> Jet:
    """Product rule through third order in ``x`` and first order in ``t``."""
    if not isinstance(g, Jet):
        return jet_scale(f, g)
    fv, gv = f.val, g.val
    dt = _opt_add(_opt_mul(f.dt, gv), _opt_mul(fv, g.dt))
    dx = _opt_add(_opt_mul(f.dx, gv), _opt_mul(fv, g.dx))
    dxx = _opt_add(_opt_add(_opt_mul(f.dxx, gv), _opt_scale(_opt_mul(f.dx, g.dx), 2.0)),
                   _opt_mul(fv, g.dxx))
    dxxx = _opt_add(
        _opt_add(_opt_mul(f.dxxx, gv), _opt_scale(_opt_mul(f.dxx, g.dx), 3.0)),
        _opt_add(_opt_scale(_opt_mul(f.dx, g.dxx), 3.0), _opt_mul(fv, g.dxxx)),
    )
    return Jet(fv * gv, dt, dx, dxx, dxxx)


def jet_tanh(a: Jet, x_order: int = 3) -> Jet:
    """Faa di Bruno for ``tanh``; ``x_order`` truncates the x-derivatives."""
    p = tanh(a.val)
    if a.dt is None and (a.dx is None or x_order < 1):
        return Jet(p)
    p1 = 1.0 - p * p
    dt = _opt_mul(p1, a.dt)
    dx = _opt_mul(p1, a.dx) if x_order >= 1 else None
    dxx = dxxx = None
    if x_order >= 2:
        p2 = (p * p1) * -2.0
        ax2 = _opt_mul(a.dx, a.dx)
        dxx = _opt_add(_opt_mul(p2, ax2), _opt_mul(p1, a.dxx))
        if x_order >= 3:
            p3 = (p1 * p1) * -2.0 - (p * p2) * 2.0
            dxxx = _opt_add(
                _opt_add(_opt_mul(p3, _opt_mul(ax2, a.dx)),
                         _opt_scale(_opt_mul(_opt_mul(p2, a.dx), a.dxx), 3.0)),
                _opt_mul(p1, a.dxxx),
            )
    return Jet(p, dt, dx, dxx, dxxx)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def grad(objective: Callable, theta, iteration: Optional[int] = None):
    """Value and gradient of ``objective(theta)`` by one reverse sweep.

    ``objective`` receives a :class:`Var` leaf and must return a scalar
    :class:`Var` (or a plain number when it does not depend on ``theta``).
    """
    theta = np.asarray(theta)
    tape = Tape()
    leaf = tape.leaf(theta)
    try:
        out = objective(leaf)
        loss = float(value_of(out))
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"objective is not finite: {loss}", iteration)
        if not isinstance(out, Var):
            return loss, np.zeros_like(theta)
        g = tape.backward(out).get(leaf.index)
    finally:
        # nodes point back at the tape; drop the cycle so arrays free at once
        tape.nodes.clear()
    if g is None:
        g = np.zeros_like(theta)
    return loss, np.asarray(g, dtype=theta.dtype).reshape(theta.shape)


def fd_check(objective: Callable, theta, n_probe: int, h: float = 1e-6,
             seed: int = 0, stencil: int = 2) -> float:
    """Largest relative mismatch between reverse-mode and central differences.

    ``n_probe`` coordinates are drawn without replacement.  Step per
    coordinate is ``h * max(1, |theta_i|)``.  ``stencil=4`` uses the
    fourth-order five-point formula.
    """
    theta = np.asarray(theta, dtype=float)
    if n_probe > theta.size:
        raise ValueError("n_probe exceeds parameter count")
    _, g_ad = grad(objective, theta)

    def f(th):
        return float(value_of(objective(th)))

    rng = np.random.default_rng(seed)
    probe = rng.choice(theta.size, size=n_probe, replace=False)
    worst = 0.0
    for i in probe:
        hi = h * max(1.0, abs(theta[i]))

        def shifted(k):
            th = theta.copy()
            th[i] += k * hi
            return f(th)

        if stencil == 2:
            g_fd = (shifted(1) - shifted(-1)) / (2 * hi)
        elif stencil == 4:
            g_fd = (8 * (shifted(1) - shifted(-1)) - (shifted(2) - shifted(-2))) / (12 * hi)
        else:
            raise ValueError("stencil must be 2 or 4")
        worst = max(worst, abs(g_ad[i] - g_fd) / max(abs(g_fd), 1e-12))
    return worst
