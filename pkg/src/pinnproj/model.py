"""Fully connected tanh network u(x, t) evaluated as a Taylor jet."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffengine import Jet, jet_tanh, matmul, reshape, value_of

DEFAULT_LAYERS = (2,) + (20,) * 9 + (1,)


class ModelEvaluationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpArchitecture:
    layer_sizes: tuple = DEFAULT_LAYERS
    activation: str = "tanh"
    input_bounds: tuple = (-1.0, 1.0, 0.0, 1.0)  # x_min, x_max, t_min, t_max

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "input_bounds", tuple(float(b) for b in self.input_bounds))
        if len(sizes) < 2 or sizes[0] != 2 or sizes[-1] != 1:
            raise ValueError(f"layer sizes must run from 2 inputs to 1 output, got {sizes}")
        if any(n < 1 for n in sizes):
            raise ValueError("layer sizes must be positive")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        x_min, x_max, t_min, t_max = self.input_bounds
        if not (x_min < x_max and t_min < t_max):
            raise ValueError(f"degenerate input bounds {self.input_bounds}")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def offsets(self):
        """Per layer ``((w_start, w_stop), (b_start, b_stop))`` into the flat vector."""
        out, k = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = (k, k + a * b)
            k += a * b
            out.append((w, (k, k + b)))
            k += b
        return out


@dataclass
class ParamVector:
    """Flat network parameters; weights of layer ``l`` are stored row-major as
    ``(n_in, n_out)`` followed by its ``n_out`` biases."""

    values: np.ndarray
    arch: MlpArchitecture = field(default_factory=MlpArchitecture)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")

    @property
    def offsets(self):
        return self.arch.offsets()

    def __len__(self):
        return self.values.size


def init_xavier_normal(arch: MlpArchitecture, seed) -> ParamVector:
    """Weights ~ N(0, 2 / (n_in + n_out)) per layer, zero biases.

    ``seed`` is an int or a :class:`pinnproj.optim.Prng`.
    """
    from .optim import Prng

    prng = seed if isinstance(seed, Prng) else Prng(seed)
    values = np.zeros(arch.n_params)
    for (a, b), ((w0, w1), _) in zip(zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]),
                                     arch.offsets()):
        sigma = np.sqrt(2.0 / (a + b))
        values[w0:w1] = sigma * prng.normal(a * b)
    return ParamVector(values, arch)


def unpack(theta, arch: MlpArchitecture):
    """List of ``(W, b)`` views (or tape slices) of a flat parameter vector."""
    if isinstance(theta, ParamVector):
        theta = theta.values
    layers = []
    for (a, b), ((w0, w1), (b0, b1)) in zip(zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]),
                                            arch.offsets()):
        layers.append((reshape(theta[w0:w1], (a, b)), reshape(theta[b0:b1], (1, b))))
    return layers


def _affine(j: Jet, W, b) -> Jet:
    lin = [None if c is None else matmul(c, W) for c in (j.dt, j.dx, j.dxx, j.dxxx)]
    return Jet(matmul(j.val, W) + b, *lin)


def forward_points(theta, arch: MlpArchitecture, x, t, x_order: int = 3,
                   t_order: int = 1) -> Jet:
    """Batched jet of u at points ``(x[i], t[i])``; components have shape ``(N,)``.

    Derivatives are with respect to the original (unnormalised) inputs.
    ``x_order`` (0..3) and ``t_order`` (0..1) truncate the jet; dropped
    components are ``None``.
    """
    if isinstance(theta, ParamVector):
        theta = theta.values
    dtype = value_of(theta).dtype
    x = np.asarray(x, dtype=dtype).reshape(-1, 1)
    t = np.asarray(t, dtype=dtype).reshape(-1, 1)
    x_min, x_max, t_min, t_max = arch.input_bounds
    sx = 2.0 / (x_max - x_min)
    st = 2.0 / (t_max - t_min)
    xn = (2.0 * (x - x_min) / (x_max - x_min) - 1.0).astype(dtype)
    tn = (2.0 * (t - t_min) / (t_max - t_min) - 1.0).astype(dtype)

    layers = unpack(theta, arch)
    W, b = layers[0]
    wx, wt = W[0:1], W[1:2]
    z = Jet(
        xn * wx + tn * wt + b,
        wt * st if t_order >= 1 else None,
        wx * sx if x_order >= 1 else None,
    )
    if len(layers) == 1:
        out = z  # no hidden layer: the net is affine
    else:
        h = jet_tanh(z, x_order)
        for W, b in layers[1:-1]:
            h = jet_tanh(_affine(h, W, b), x_order)
        W, b = layers[-1]
        out = _affine(h, W, b)
    n = x.shape[0]
    comps = []
    for c in out.components(fill=None):
        if c is None:
            comps.append(None)
        elif np.shape(value_of(c))[0] == n:
            comps.append(reshape(c, (n,)))
        else:  # derivative still a broadcast row (single-layer nets)
            comps.append(reshape(c + np.zeros((n, 1), dtype=dtype), (n,)))
    return Jet(*comps)


def predict(theta, arch: MlpArchitecture, x, t):
    """u(x, t) without derivative tracking."""
    return forward_points(theta, arch, x, t, x_order=0, t_order=0).val


def _check_finite(j: Jet, where=""):
    for name, c in zip(Jet.COMPONENTS, j.components()):
        v = np.asarray(value_of(c))
        if not np.all(np.isfinite(v)):
            bad = np.flatnonzero(~np.isfinite(np.atleast_1d(v)))
            raise ModelEvaluationError(f"non-finite {name} at point index {bad[0]}{where}")


def forward(theta, arch: MlpArchitecture, x: float, t: float) -> Jet:
    """Full jet of u at a single point."""
    if not (np.isfinite(x) and np.isfinite(t)):
        raise ValueError("input point must be finite")
    j = forward_points(theta, arch, [x], [t])
    _check_finite(j)
    return Jet(*(float(np.ravel(value_of(c))[0]) for c in j.components()))


def forward_batch(theta, arch: MlpArchitecture, points) -> list:
    """Elementwise :func:`forward`; order of outputs matches ``points``.

    Points are evaluated one at a time so each result is bitwise independent
    of its neighbours.  Use :func:`forward_points` for large batches.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    out = []
    for i, (x, t) in enumerate(pts):
        try:
            out.append(forward(theta, arch, x, t))
        except (ModelEvaluationError, ValueError) as exc:
            raise type(exc)(f"point {i}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Checkpoints: "#mlp sizes=<comma list> bounds=<x_min,x_max,t_min,t_max>" then
# one parameter per line in offset order.
# ---------------------------------------------------------------------------


def write_checkpoint(path, params: ParamVector) -> None:
    arch = params.arch
    sizes = ",".join(str(n) for n in arch.layer_sizes)
    bounds = ",".join(format(b, ".17g") for b in arch.input_bounds)
    lines = [f"#mlp sizes={sizes} bounds={bounds}"]
    lines += [format(v, ".17g") for v in params.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint(path) -> ParamVector:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#mlp "):
        raise ValueError(f"{path}: missing '#mlp' header line")
    fields = dict(item.split("=", 1) for item in text[0][5:].split())
    try:
        sizes = tuple(int(n) for n in fields["sizes"].split(","))
        bounds = tuple(float(b) for b in fields["bounds"].split(","))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from None
    arch = MlpArchitecture(sizes, "tanh", bounds)
    values = [float(v) for v in text[1:] if v.strip()]
    if len(values) != arch.n_params:
        raise ValueError(f"{path}: expected {arch.n_params} values, found {len(values)}")
    return ParamVector(np.array(values), arch)


__all__ = [
    "MlpArchitecture",
    "ParamVector",
    "ModelEvaluationError",
    "init_xavier_normal",
    "unpack",
    "forward",
    "forward_batch",
    "forward_points",
    "predict",
    "write_checkpoint",
    "read_checkpoint",
]
