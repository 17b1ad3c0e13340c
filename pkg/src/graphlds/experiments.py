"""Experiment harness: splits, metrics, sweeps, replication, aggregation.

Runs the synthetic protocol end to end: generate a ground-truth field
on a topology, simulate a panel long enough for buffered
train/validation/test splits, fit every requested method (penalized
methods get their own regularization grid selected on validation), and
score parameter and prediction errors.  Sweeps replicate over seeds
derived from (base seed, sweep value, repetition) so adding sweep
values never perturbs existing runs, and aggregate to means with 95%
normal confidence intervals.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from graphlds.estimators import (
    DesignSystem,
    FitResult,
    SolverOptions,
    build_design,
    fit_group_lasso,
    fit_laplacian,
    fit_ols_individual,
    fit_ols_pooled,
    lambda_grid,
    regularization_path,
    _grad_mat,
)
from graphlds.graphs import Graph, build_graph, connected_erdos_renyi
from graphlds.systems import (
    PiecewiseField,
    SmoothField,
    SystemEnsemble,
    TrajectoryPanel,
    gen_ground_truth,
    one_step_pred_mse,
    simulate_panel,
)

DEFAULT_METHODS = ("graph_tv", "ols_ind", "ols_pooled", "laplacian", "group_lasso")


@dataclass(frozen=True)
class SplitSpec:
    """Buffered contiguous train | buffer | val | buffer | test layout."""

    T_train: int
    T_val: int = 4
    T_test: int = 8
    buffer: int = 100

    @property
    def T_total(self) -> int:
        return self.T_train + 2 * self.buffer + self.T_val + self.T_test


def make_splits(panel: TrajectoryPanel, spec: SplitSpec):
    """Slice one panel into non-overlapping train/val/test sub-panels."""
    if panel.T_total < spec.T_total:
        raise ValueError(f"panel has {panel.T_total} steps, split needs {spec.T_total}")
    t0 = spec.T_train
    v0 = t0 + spec.buffer
    v1 = v0 + spec.T_val
    s0 = v1 + spec.buffer
    s1 = s0 + spec.T_test
    return panel.slice(0, t0), panel.slice(v0, v1), panel.slice(s0, s1)


@dataclass(frozen=True)
class MetricRow:
    method: str
    seed: int
    sweep_value: float
    param_mse: float
    pred_mse: float
    selected_lambda: float
    wall_ms: float
    n_iter: int
    flags: str = ""


def compute_metrics(
    fit: FitResult,
    truth: SystemEnsemble | None,
    test_panel: TrajectoryPanel,
    seed: int = 0,
    sweep_value: float = 0.0,
    wall_ms: float = 0.0,
) -> MetricRow:
    """Parameter MSE against the truth (when known) and test prediction MSE."""
    if test_panel.T_total < 1:
        raise ValueError("test panel needs at least one transition")
    mats = fit.matrices()
    if truth is not None:
        param = float(np.sum((mats - truth.matrices) ** 2) / truth.m)
    else:
        param = math.nan
    pred = one_step_pred_mse(mats, test_panel)
    return MetricRow(
        method=fit.method,
        seed=seed,
        sweep_value=sweep_value,
        param_mse=param,
        pred_mse=pred,
        selected_lambda=fit.lambda_,
        wall_ms=wall_ms,
        n_iter=fit.iterations,
        flags=";".join(fit.flags),
    )


def coefficient_stability(fits: list) -> float:
    """Mean across-repeat variance (unbiased) of every coefficient.

    Serves as a reproducibility proxy when no ground truth exists:
    identical fits give exactly zero.
    """
    if len(fits) < 2:
        raise ValueError("need at least 2 repeats")
    shapes = {(f.m, f.d) for f in fits}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch across repeats: {shapes}")
    stacked = np.stack([f.a_hat for f in fits])  # (R, m*d^2)
    stacked = stacked - stacked[0]  # variance is shift invariant; identical fits give exact zero
    return float(stacked.var(axis=0, ddof=1).mean())


def derive_seed(base_seed: int, sweep_value: float, rep: int) -> int:
    """Stable run seed from (base, value, repetition); independent of the
    position of the value inside the sweep grid."""
    bits = int(np.float64(sweep_value).view(np.uint64))
    ss = np.random.SeedSequence([int(base_seed), bits, int(rep)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: an axis, its values, and everything held fixed."""

    axis: str  # T | m | jump | omega
    values: tuple
    topology: str = "path"
    topology_params: dict = field(default_factory=dict)
    field_kind: str = "piecewise"  # piecewise | smooth
    field_s: float = 0.5
    field_omega: float = 1.0
    n_rep: int = 15
    base_seed: int = 0
    methods: tuple = DEFAULT_METHODS
    split: SplitSpec = SplitSpec(T_train=16)
    grid_size: int = 50
    solver: SolverOptions = SolverOptions()
    m: int = 64
    record_timing: bool = True

    def __post_init__(self):
        if self.axis not in ("T", "m", "jump", "omega"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if list(self.values) != sorted(set(self.values)):
            raise ValueError("sweep values must be strictly increasing")
        if self.n_rep < 1:
            raise ValueError("n_rep must be >= 1")


def _graph_for_run(cfg: SweepConfig, m: int, run_seed: int) -> Graph:
    params = dict(cfg.topology_params)
    if cfg.topology == "erdos_renyi":
        return connected_erdos_renyi(m, params.get("p", 0.5), run_seed)
    if cfg.topology == "grid2d":
        nx = params.get("nx", int(round(math.sqrt(m))))
        ny = params.get("ny", m // nx)
        if nx * ny != m:
            raise ValueError(f"grid dims {nx}x{ny} do not multiply to m={m}")
        return build_graph("grid2d", nx=nx, ny=ny)
    return build_graph(cfg.topology, m=m, **params)


def _field_for_run(cfg: SweepConfig, value: float):
    s = cfg.field_s
    omega = cfg.field_omega
    if cfg.axis == "jump":
        s = value
    if cfg.axis == "omega":
        omega = value
    if cfg.field_kind == "piecewise":
        return PiecewiseField(s=s)
    if cfg.field_kind == "smooth":
        return SmoothField(s=s, omega=omega)
    raise ValueError(f"unknown field kind {cfg.field_kind!r}")


def _lap_lambda_grid(ds: DesignSystem, g: Graph, grid_size: int) -> np.ndarray:
    from graphlds.graphs import spectrum

    fiedler = spectrum(g).fiedler
    data_curv = max(float(np.linalg.norm(ds.gram[l], 2)) for l in range(ds.m)) / ds.m
    hi = 10.0 * data_curv / max(2.0 * fiedler, 1e-12)
    return lambda_grid(hi, grid_size, floor_ratio=1e-6)


def _group_lasso_lambda_grid(ds: DesignSystem, grid_size: int) -> np.ndarray:
    pooled = fit_ols_pooled(ds)
    grad = _grad_mat(ds, pooled.a_hat.reshape(ds.m, ds.d * ds.d))
    hi = float(np.linalg.norm(grad, axis=0).max())
    return lambda_grid(hi, grid_size)


def _fit_method(method: str, ds: DesignSystem, g: Graph, val_panel: TrajectoryPanel, cfg: SweepConfig) -> FitResult:
    if method == "ols_ind":
        return fit_ols_individual(ds)
    if method == "ols_pooled":
        return fit_ols_pooled(ds)
    if method == "graph_tv":
        return regularization_path(ds, g, cfg.grid_size, val_panel, opts=cfg.solver).selected
    if method == "laplacian":
        fits = [fit_laplacian(ds, g, float(lam)) for lam in _lap_lambda_grid(ds, g, cfg.grid_size)]
        scores = [one_step_pred_mse(f.matrices(), val_panel) for f in fits]
        return fits[int(np.argmin(scores))]
    if method == "group_lasso":
        fits = [fit_group_lasso(ds, float(lam)) for lam in _group_lasso_lambda_grid(ds, cfg.grid_size)]
        scores = [one_step_pred_mse(f.matrices(), val_panel) for f in fits]
        return fits[int(np.argmin(scores))]
    raise ValueError(f"unknown method {method!r}")


def _execute_run(cfg: SweepConfig, value: float, rep: int) -> list:
    """All methods for one (sweep value, repetition); failures become
    flagged NaN rows instead of aborting the sweep."""
    run_seed = derive_seed(cfg.base_seed, value, rep)
    m = int(value) if cfg.axis == "m" else cfg.m
    split = replace(cfg.split, T_train=int(value)) if cfg.axis == "T" else cfg.split
    rows = []
    try:
        g = _graph_for_run(cfg, m, run_seed)
        truth = gen_ground_truth(g, _field_for_run(cfg, value))
        panel = simulate_panel(truth, split.T_total, run_seed)
        train, val, test = make_splits(panel, split)
        ds = build_design(train)
    except Exception as exc:
        return [
            MetricRow(method, run_seed, value, math.nan, math.nan, math.nan, 0.0, 0, f"error:{exc}")
            for method in cfg.methods
        ]
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            fit = _fit_method(method, ds, g, val, cfg)
            wall = (time.perf_counter() - t0) * 1000.0 if cfg.record_timing else 0.0
            rows.append(compute_metrics(fit, truth, test, seed=run_seed, sweep_value=value, wall_ms=wall))
        except Exception as exc:
            rows.append(MetricRow(method, run_seed, value, math.nan, math.nan, math.nan, 0.0, 0, f"error:{exc}"))
    return rows


@dataclass(frozen=True)
class AggregateRow:
    sweep_value: float
    method: str
    mean_param_mse: float
    ci95_param: float
    mean_pred_mse: float
    ci95_pred: float
    n_ok: int


def aggregate(rows: list, cfg: SweepConfig) -> list:
    """Mean and 95% CI over surviving repetitions, per (value, method)."""
    out = []
    for value in cfg.values:
        for method in cfg.methods:
            sel = [r for r in rows if r.method == method and r.sweep_value == value and not math.isnan(r.param_mse)]
            if not sel:
                out.append(AggregateRow(value, method, math.nan, math.nan, math.nan, math.nan, 0))
                continue
            params = np.array([r.param_mse for r in sel])
            preds = np.array([r.pred_mse for r in sel])
            n = len(sel)
            ci_p = 1.96 * params.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
            ci_q = 1.96 * preds.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
            out.append(AggregateRow(value, method, float(params.mean()), float(ci_p), float(preds.mean()), float(ci_q), n))
    return out


def run_sweep(cfg: SweepConfig, jobs: int = 1):
    """Execute every (value, repetition) unit and aggregate.

    Units are independent; with jobs > 1 they run in a process pool.
    Results are merged in deterministic (value, rep, method) order, so
    the output is identical regardless of scheduling.
    """
    units = [(value, rep) for value in cfg.values for rep in range(cfg.n_rep)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute_run, [cfg] * len(units), [u[0] for u in units], [u[1] for u in units]))
    else:
        results = [_execute_run(cfg, value, rep) for (value, rep) in units]
    rows = [row for batch in results for row in batch]
    return rows, aggregate(rows, cfg)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def rows_to_csv(rows: list, cfg: SweepConfig) -> str:
    buf = io.StringIO()
    buf.write("sweep_axis,sweep_value,topology,field,method,seed,param_mse,pred_mse,selected_lambda,n_iter,wall_ms,flags\n")
    for r in rows:
        buf.write(
            f"{cfg.axis},{_fmt(r.sweep_value)},{cfg.topology},{cfg.field_kind},{r.method},{r.seed},"
            f"{_fmt(r.param_mse)},{_fmt(r.pred_mse)},{_fmt(r.selected_lambda)},{r.n_iter},{_fmt(r.wall_ms)},{r.flags}\n"
        )
    return buf.getvalue()


def aggregates_to_csv(aggs: list) -> str:
    buf = io.StringIO()
    buf.write("sweep_value,method,mean_param_mse,ci95_param,mean_pred_mse,ci95_pred,n_ok\n")
    for a in aggs:
        buf.write(
            f"{_fmt(a.sweep_value)},{a.method},{_fmt(a.mean_param_mse)},{_fmt(a.ci95_param)},"
            f"{_fmt(a.mean_pred_mse)},{_fmt(a.ci95_pred)},{a.n_ok}\n"
        )
    return buf.getvalue()
