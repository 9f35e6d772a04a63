"""L-BFGS with a strong Wolfe line search, a plain Adam loop, and the
repository-wide random stream."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .diffengine import TrainingDivergenceError

log = logging.getLogger(__name__)

STREAM_INIT = 0
STREAM_SAMPLE = 1
STREAM_LHS = 2
STREAM_SOFT = 3


class Prng:
    """Seeded Philox-4x64 stream (counter based).

    Each ``(seed, stream)`` pair keys an independent counter sequence, so the
    init, sampling and LHS streams of one trial never overlap.  Normals use
    numpy's ziggurat transform of the same bit stream.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, self.stream])))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct integers from ``range(n)``."""
        return self._gen.choice(n, size=size, replace=False)


def prng_uniform(p: Prng, n: int) -> np.ndarray:
    return p.uniform(n)


def prng_normal(p: Prng, n: int) -> np.ndarray:
    return p.normal(n)


@dataclass
class LbfgsConfig:
    history_size: int = 50
    max_iterations: int = 50000
    grad_tolerance: float = 1e-9
    loss_change_tolerance: float = 1e-11
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 25

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.grad_tolerance <= 0 or self.loss_change_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.history_size < 1 or self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise ValueError("counts must be positive")


@dataclass
class OptimTrace:
    """Accepted iterations only; ``grad_norm`` is the infinity norm."""

    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step_length: list = field(default_factory=list)
    termination_reason: str = ""
    initial_loss: float = float("nan")
    n_evaluations: int = 0
    rejected_pairs: int = 0

    def __len__(self):
        return len(self.loss)

    def record(self, loss, grad_norm, step):
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))
        self.step_length.append(float(step))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,loss,grad_norm,step_length\n")
            for i, (f, g, a) in enumerate(zip(self.loss, self.grad_norm, self.step_length), 1):
                fh.write(f"{i},{f:.17g},{g:.17g},{a:.17g}\n")


class OptimizationAborted(RuntimeError):
    def __init__(self, message, trace: OptimTrace):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# line search
# ---------------------------------------------------------------------------


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic through two points with slopes, or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    sq = d1 * d1 - da * db
    if sq < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(sq)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


class _LineSearch:
    def __init__(self, fg, x, f0, g0, d, c1, c2, max_steps):
        self.fg, self.x, self.d = fg, x, d
        self.f0, self.dphi0 = f0, float(g0 @ d)
        self.c1, self.c2 = c1, c2
        self.budget = max_steps
        self.n_evals = 0

    def phi(self, a):
        self.n_evals += 1
        self.budget -= 1
        try:
            f, g = self.fg(self.x + a * self.d)
        except (TrainingDivergenceError, FloatingPointError):
            return np.inf, None, np.nan
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, None, np.nan
        return f, g, float(g @ self.d)

    def armijo_ok(self, a, f):
        return f <= self.f0 + self.c1 * a * self.dphi0

    def curvature_ok(self, dphi):
        return abs(dphi) <= -self.c2 * self.dphi0

    def run(self, alpha0):
        """Returns ``(alpha, f, g)`` satisfying strong Wolfe, or None."""
        a_prev, f_prev, d_prev = 0.0, self.f0, self.dphi0
        a = alpha0
        first = True
        while self.budget > 0:
            f, g, dphi = self.phi(a)
            if not self.armijo_ok(a, f) or (not first and f >= f_prev):
                return self.zoom(a_prev, f_prev, d_prev, a, f, dphi)
            if self.curvature_ok(dphi):
                return a, f, g
            if dphi >= 0:
                return self.zoom(a, f, dphi, a_prev, f_prev, d_prev)
            a_new = _cubic_min(a_prev, f_prev, d_prev, a, f, dphi)
            lo, hi = a + 0.01 * (a - a_prev), 10.0 * a
            if a_new is None or not (lo <= a_new <= hi):
                a_new = min(2.0 * a, hi)
            a_prev, f_prev, d_prev = a, f, dphi
            a = a_new
            first = False
        return None

    def zoom(self, a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
        while self.budget > 0:
            width = a_hi - a_lo
            if abs(width) <= 1e-16 * max(1.0, abs(a_lo)):
                return None
            a = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo, hi = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if a is None or not (lo <= a <= hi):
                a = 0.5 * (a_lo + a_hi)
            f, g, dphi = self.phi(a)
            if not self.armijo_ok(a, f) or f >= f_lo:
                a_hi, f_hi, d_hi = a, f, dphi
            else:
                if self.curvature_ok(dphi):
                    return a, f, g
                if dphi * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, dphi
        return None


# ---------------------------------------------------------------------------
# L-BFGS
# ---------------------------------------------------------------------------


def curvature_pair_ok(s, y) -> bool:
    """Positive-definiteness guard: keep ``(s, y)`` only if ``s.y > 1e-10 |s| |y|``."""
    return float(s @ y) > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y)


def _two_loop(g, S, Y, rho):
    q = g.copy()
    alphas = []
    for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
        a = r * (s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
        b = r * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(objective, theta0, cfg: LbfgsConfig | None = None, callback=None):
    """Minimise ``objective(theta) -> (loss, grad)`` from ``theta0``.

    Terminates on ``||grad||_inf <= grad_tolerance`` (``grad_tol``),
    ``|loss change| <= loss_change_tolerance`` (``loss_tol``), the iteration
    cap (``max_iter``) or a line search that fails even from a steepest
    descent restart (``line_search_failure``).
    """
    cfg = cfg or LbfgsConfig()
    x = np.array(theta0, dtype=float)
    trace = OptimTrace()
    try:
        f, g = objective(x)
    except (TrainingDivergenceError, FloatingPointError) as exc:
        raise OptimizationAborted(f"objective not finite at start: {exc}", trace) from exc
    trace.n_evaluations = 1
    g = np.asarray(g, dtype=float)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise OptimizationAborted("objective not finite at start", trace)
    trace.initial_loss = float(f)

    S: deque = deque(maxlen=cfg.history_size)
    Y: deque = deque(maxlen=cfg.history_size)
    rho: deque = deque(maxlen=cfg.history_size)
    it = 0
    while True:
        gnorm = np.max(np.abs(g)) if g.size else 0.0
        if gnorm <= cfg.grad_tolerance:
            trace.termination_reason = "grad_tol"
            break
        if it >= cfg.max_iterations:
            trace.termination_reason = "max_iter"
            break

        d = _two_loop(g, S, Y, rho) if S else -g
        if S and g @ d >= 0:
            S.clear(), Y.clear(), rho.clear()
            d = -g
        result = None
        for restart in (False, True):
            if restart:
                if not S:
                    break
                log.debug("line search failed at iteration %d; steepest descent restart", it)
                S.clear(), Y.clear(), rho.clear()
                d = -g
            alpha0 = 1.0 if S else min(1.0, 1.0 / np.sum(np.abs(g)))
            ls = _LineSearch(objective, x, f, g, d, cfg.wolfe_c1, cfg.wolfe_c2,
                             cfg.max_line_search_steps)
            result = ls.run(alpha0)
            trace.n_evaluations += ls.n_evals
            if result is not None:
                break
        if result is None:
            trace.termination_reason = "line_search_failure"
            break

        alpha, f_new, g_new = result
        s = alpha * d
        y = g_new - g
        if curvature_pair_ok(s, y):
            S.append(s)
            Y.append(y)
            rho.append(1.0 / (s @ y))
        else:
            trace.rejected_pairs += 1
        f_old = f
        x = x + s
        f, g = f_new, np.asarray(g_new, dtype=float)
        it += 1
        trace.record(f, np.max(np.abs(g)), alpha)
        if callback is not None:
            callback(it, x, f)
        if abs(f_old - f) <= cfg.loss_change_tolerance:
            trace.termination_reason = "loss_tol"
            break
    return x, trace


def adam_minimize(objective, theta0, steps: int, lr: float = 1e-3,
                  betas=(0.9, 0.999), eps: float = 1e-8):
    """Plain Adam with bias correction; ``objective(theta) -> (loss, grad)``."""
    x = np.array(theta0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = betas
    trace = OptimTrace(termination_reason="max_iter")
    for k in range(1, steps + 1):
        try:
            f, g = objective(x)
        except (TrainingDivergenceError, FloatingPointError) as exc:
            raise OptimizationAborted(f"non-finite loss at step {k}: {exc}", trace) from exc
        if not np.isfinite(f):
            raise OptimizationAborted(f"non-finite loss at step {k}", trace)
        if k == 1:
            trace.initial_loss = float(f)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        trace.n_evaluations += 1
        trace.record(f, np.max(np.abs(g)) if g.size else 0.0, lr)
    return x, trace
