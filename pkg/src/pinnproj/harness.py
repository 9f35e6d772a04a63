"""Experiment runner: trains the model variants, scores them and writes the
trial/aggregate/series reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (Dataset, SamplingPlan, generate, lhs_sample, read_dataset,
                      sample_training_points, snap_times)
from .diffengine import grad
from .model import MlpArchitecture, init_xavier_normal, predict, write_checkpoint, ParamVector
from .optim import (STREAM_INIT, STREAM_LHS, STREAM_SAMPLE, STREAM_SOFT, LbfgsConfig,
                    OptimizationAborted, Prng, lbfgs_minimize)
from .physics import (VARIANTS, CollocationSet, ConfigurationError, ConservedTarget,
                      TrainingSet, loss_total, momentum, project_field)

log = logging.getLogger(__name__)

MAX_SOFT_TIMES = 100
DESK_MAX_ITERATIONS = 2000
DTYPES = {"f64": np.float64, "f32": np.float32}

TRIAL_COLUMNS = ["dataset", "variant", "trial", "seed", "status", "error_u", "error_c",
                 "final_loss", "iterations", "termination_reason", "wall_time"]


class UndefinedMetricError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    datasets: list = field(default_factory=lambda: ["advection", "burgers", "kdv"])
    variants: list = field(default_factory=lambda: list(VARIANTS))
    trials: int = 5
    base_seed: int = 0
    optimizer: LbfgsConfig = field(default_factory=lambda: LbfgsConfig(max_iterations=DESK_MAX_ITERATIONS))
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    precision: str = "f64"
    proj_output_only: bool = False
    round_grid: int | None = None
    snap_collocation_times: bool = True
    full_jet: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if not self.datasets:
            raise ConfigurationError("no datasets configured")
        if not self.variants:
            raise ConfigurationError("no variants configured")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigurationError(f"unknown variants {bad}")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}")
        if self.base_seed < 0:
            raise ConfigurationError("base_seed must be non-negative")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def to_dict(self):
        return asdict(self)

    # -- flat "key = value" files ------------------------------------------

    _OPTIM_KEYS = {"history_size": int, "max_iterations": int, "grad_tolerance": float,
                   "loss_change_tolerance": float, "wolfe_c1": float, "wolfe_c2": float,
                   "max_line_search_steps": int}
    _SAMPLING_KEYS = {"n_train": int, "n_collocation": int}

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in raw:
                raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
            raw[key] = value
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        kw, optim, sampling = {}, {}, {}

        def as_list(v):
            return [s.strip() for s in v.split(",") if s.strip()]

        def as_bool(v):
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigurationError(f"not a boolean: {v!r}")

        conv = {"datasets": as_list, "variants": as_list, "trials": int, "base_seed": int,
                "precision": str, "proj_output_only": as_bool, "snap_collocation_times": as_bool,
                "full_jet": as_bool, "output_dir": str,
                "round_grid": lambda v: None if v.lower() in ("", "none") else int(v)}
        try:
            for key, value in raw.items():
                if key in conv:
                    kw[key] = conv[key](value)
                elif key in cls._OPTIM_KEYS:
                    optim[key] = cls._OPTIM_KEYS[key](value)
                elif key in cls._SAMPLING_KEYS:
                    sampling[key] = cls._SAMPLING_KEYS[key](value)
                else:
                    raise ConfigurationError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"bad config value: {exc}") from None
        optim.setdefault("max_iterations", DESK_MAX_ITERATIONS)
        kw["optimizer"] = LbfgsConfig(**optim)
        kw["sampling"] = SamplingPlan(**sampling)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


@dataclass
class TrialResult:
    variant: str
    dataset: str
    trial: int
    seed: int
    error_u: float = float("nan")
    error_c: float = float("nan")
    c_series: np.ndarray = None
    iterations: int = 0
    wall_time: float = 0.0
    termination_reason: str = ""
    final_loss: float = float("nan")
    status: str = "ok"
    message: str = ""

    @property
    def ok(self):
        return self.status == "ok"

    def row(self):
        return {"dataset": self.dataset, "variant": self.variant, "trial": self.trial,
                "seed": self.seed, "status": self.status, "error_u": self.error_u,
                "error_c": self.error_c, "final_loss": self.final_loss,
                "iterations": self.iterations, "termination_reason": self.termination_reason,
                "wall_time": self.wall_time}


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def error_u(u_pred, u_true) -> float:
    """Relative Frobenius error over the whole space-time grid."""
    u_pred = np.asarray(u_pred, dtype=float)
    u_true = np.asarray(u_true, dtype=float)
    if u_pred.shape != u_true.shape:
        raise ValueError(f"shape mismatch {u_pred.shape} vs {u_true.shape}")
    norm = np.linalg.norm(u_true)
    if norm == 0:
        raise UndefinedMetricError("relative error undefined for an all-zero reference")
    return float(np.linalg.norm(u_pred - u_true) / norm)


def error_c(c_series, c_true: float) -> float:
    """Euclidean norm of ``c(t) - c_true`` over the time series."""
    c_series = np.asarray(c_series, dtype=float)
    if c_series.size == 0:
        raise ValueError("empty c series")
    return float(np.linalg.norm(c_series - c_true))


def predict_field(theta, arch, ds: Dataset, variant: str, dtype=np.float64) -> np.ndarray:
    """Model state on the dataset grid, ``(nt, nx)``; projected for ``pinn_proj``."""
    theta = np.asarray(theta.values if isinstance(theta, ParamVector) else theta).astype(dtype)
    X, T = np.meshgrid(ds.xs, ds.ts)
    u = np.asarray(predict(theta, arch, X.ravel(), T.ravel())).reshape(ds.nt, ds.nx)
    if variant == "pinn_proj":
        c = dtype(ds.c_true)
        u = project_field(u, ds.grid(), ConservedTarget(float(c)))
    return u


def predict_c_series(theta, arch, ds: Dataset, variant: str, dtype=np.float64) -> np.ndarray:
    """Predicted total momentum at each dataset time."""
    u = predict_field(theta, arch, ds, variant, dtype)
    return np.asarray(momentum(u, ds.grid()), dtype=float)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def load_dataset(entry: str, round_grid=None):
    """``(label, Dataset)`` from a dataset file path or a pde name."""
    p = Path(entry)
    if p.is_file():
        return p.stem, read_dataset(p)
    return entry, generate(entry, round_grid=round_grid)


@dataclass
class TrialProblem:
    """Everything a trial trains on; built deterministically from the seed."""

    arch: MlpArchitecture
    theta0: np.ndarray
    train: TrainingSet
    colloc: CollocationSet
    soft_times: np.ndarray


def build_problem(cfg: ExperimentConfig, ds: Dataset, seed: int) -> TrialProblem:
    arch = MlpArchitecture(input_bounds=ds.bounds)
    theta0 = init_xavier_normal(arch, Prng(seed, STREAM_INIT)).values
    train = TrainingSet(sample_training_points(ds, cfg.sampling.n_train, Prng(seed, STREAM_SAMPLE)))
    pts = lhs_sample(cfg.sampling.n_collocation, ds.bounds, Prng(seed, STREAM_LHS))
    if cfg.snap_collocation_times:
        pts = snap_times(pts, ds.ts)
    colloc = CollocationSet(pts)
    times = np.unique(pts[:, 1])
    if times.size > MAX_SOFT_TIMES:
        times = np.sort(times[Prng(seed, STREAM_SOFT).choice(times.size, MAX_SOFT_TIMES)])
    return TrialProblem(arch, theta0, train, colloc, times)


def make_objective(cfg: ExperimentConfig, ds: Dataset, variant: str, problem: TrialProblem):
    """``theta -> (loss, grad)`` in the configured precision."""
    dtype = cfg.dtype
    grid = ds.grid()
    target = ConservedTarget(ds.c_true)
    soft = problem.soft_times if variant == "pinn_sc" else None
    x_order = 3 if cfg.full_jet else None

    def loss(th):
        return loss_total(variant, th, problem.arch, problem.train, problem.colloc, ds.pde,
                          grid, target, soft, cfg.proj_output_only, x_order)

    def objective(theta):
        value, g = grad(loss, np.asarray(theta).astype(dtype))
        return value, g.astype(np.float64)

    return objective


def run_trial(cfg: ExperimentConfig, ds: Dataset, variant: str, trial_index: int,
              label: str | None = None, trace_path=None):
    """Train one variant on one dataset; returns ``(TrialResult, final parameters)``."""
    seed = cfg.base_seed + trial_index
    label = label or ds.pde.kind
    result = TrialResult(variant, label, trial_index, seed)
    t0 = time.perf_counter()
    problem = build_problem(cfg, ds, seed)
    objective = make_objective(cfg, ds, variant, problem)
    theta = problem.theta0
    try:
        theta, trace = lbfgs_minimize(objective, problem.theta0, cfg.optimizer)
    except OptimizationAborted as exc:
        trace = exc.trace
        result.status = "failed"
        result.message = str(exc)
        result.termination_reason = "aborted"
        log.error("trial %s/%s/%d failed: %s", label, variant, trial_index, exc)
    else:
        result.termination_reason = trace.termination_reason
    result.iterations = len(trace)
    result.final_loss = trace.loss[-1] if trace.loss else trace.initial_loss
    if trace_path is not None:
        trace.to_csv(trace_path)
    if result.ok:
        u = predict_field(theta, problem.arch, ds, variant, cfg.dtype)
        c = np.asarray(momentum(u, ds.grid()), dtype=float)
        result.error_u = error_u(u, ds.u)
        result.c_series = c
        result.error_c = error_c(c, ds.c_true)
        if not (np.isfinite(result.error_u) and np.isfinite(result.error_c)):
            result.status = "failed"
            result.message = "non-finite evaluation metrics"
    result.wall_time = time.perf_counter() - t0
    log.info("%s/%s/trial %d: error_u=%.3e error_c=%.3e iters=%d (%s) %.1fs", label, variant,
             trial_index, result.error_u, result.error_c, result.iterations,
             result.termination_reason, result.wall_time)
    return result, ParamVector(theta, problem.arch)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_trials_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in results:
            row = r.row()
            w.writerow([_fmt(row[c]) for c in TRIAL_COLUMNS])


def write_c_series_csv(result: TrialResult, ds: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_index", "t", "c_pred", "abs_err"])
        for i, (t, c) in enumerate(zip(ds.ts, result.c_series)):
            w.writerow([i, _fmt(t), _fmt(c), _fmt(abs(c - ds.c_true))])


def aggregate(rows, variants=None):
    """Table-1 layout: one row per dataset, mean errors per variant over ok trials."""
    datasets, seen_variants = [], []
    cells: dict = {}
    for r in rows:
        d, v = r["dataset"], r["variant"]
        if d not in datasets:
            datasets.append(d)
        if v not in seen_variants:
            seen_variants.append(v)
        cell = cells.setdefault((d, v), {"u": [], "c": [], "failed": 0})
        if r["status"] == "ok":
            cell["u"].append(float(r["error_u"]))
            cell["c"].append(float(r["error_c"]))
        else:
            cell["failed"] += 1
    variants = [v for v in (variants or VARIANTS) if v in seen_variants]
    header = ["dataset"]
    for v in variants:
        header += [f"{v}_error_u", f"{v}_error_c"]
    table = []
    for d in datasets:
        row = {"dataset": d}
        for v in variants:
            cell = cells.get((d, v), {"u": [], "c": []})
            row[f"{v}_error_u"] = float(np.mean(cell["u"])) if cell["u"] else float("nan")
            row[f"{v}_error_c"] = float(np.mean(cell["c"])) if cell["c"] else float("nan")
        table.append(row)
    return header, table


def write_aggregate_csv(header, table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([_fmt(row[c]) for c in header])


def read_trials_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _series_name(result: TrialResult):
    return f"c_series_{result.dataset}_{result.variant}_{result.trial}.csv"


def write_reports(cfg: ExperimentConfig, results, datasets: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trials_csv(results, out / "trials.csv")
    header, table = aggregate([r.row() for r in results], cfg.variants)
    write_aggregate_csv(header, table, out / "aggregate.csv")
    for r in results:
        if r.ok:
            write_c_series_csv(r, datasets[r.dataset], out / _series_name(r))
    failed = [f"{r.dataset}/{r.variant}/{r.trial}: {r.message}" for r in results if not r.ok]
    summary = {
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": sorted({r.seed for r in results}),
        "n_trials": len(results),
        "n_failed": len(failed),
        "failed_trials": failed,
        "aggregate": table,
        "c_true": {k: ds.c_true for k, ds in datasets.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    return summary


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, save_models: bool = True) -> dict:
    """Run datasets x variants x trials and write all report files."""
    out = Path(out_dir or cfg.output_dir or "results")
    out.mkdir(parents=True, exist_ok=True)
    datasets, results = {}, []
    for entry in cfg.datasets:
        label, ds = load_dataset(entry, cfg.round_grid)
        if label in datasets:
            raise ConfigurationError(f"dataset {label!r} listed twice")
        datasets[label] = ds
        for variant in cfg.variants:
            for k in range(cfg.trials):
                result, params = run_trial(cfg, ds, variant, k, label)
                results.append(result)
                if save_models and result.ok:
                    (out / "models").mkdir(exist_ok=True)
                    write_checkpoint(out / "models" / f"{label}_{variant}_{k}.txt", params)
    summary = write_reports(cfg, results, datasets, out)
    if summary["n_failed"]:
        log.warning("%d trial(s) failed and were excluded from the means: %s",
                    summary["n_failed"], "; ".join(summary["failed_trials"]))
    return summary

