"""Command-line front door.

Subcommands simulate | fit | sweep | theory | ingest | reproduce wire a
flat key=value config file (plus --set overrides, which win) into the
library modules and write all artifacts atomically into an output
directory, together with a run_meta.json sidecar holding the tool
version and the fully resolved configuration.  Exit codes: 0 ok,
1 usage, 2 data error, 3 solver non-convergence under --strict.  A
failed run leaves a .failed marker next to any partial outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import graphlds
from graphlds.estimators import (
    SolverOptions,
    build_design,
    fit_graph_tv,
    fit_group_lasso,
    fit_laplacian,
    fit_ols_individual,
    fit_ols_pooled,
    regularization_path,
)
from graphlds.experiments import SplitSpec, SweepConfig, aggregates_to_csv, make_splits, rows_to_csv, run_sweep
from graphlds.graphs import Graph, GraphError, build_graph
from graphlds.ingest import IngestError, load_station_csv, preprocess_series, station_graph, to_lds_panel, transform_for_variable
from graphlds.systems import FieldError, PiecewiseField, SmoothField, TrajectoryPanel, gen_ground_truth, simulate_panel
from graphlds.theory import BoundConstants, build_theory_report

USAGE_EXIT, DATA_EXIT, SOLVER_EXIT = 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code=DATA_EXIT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise CliError(message, code=USAGE_EXIT)


def parse_config_text(text: str) -> dict:
    """Flat key = value lines; values are parsed as JSON scalars when
    possible and kept as bare strings otherwise.  '#' starts a comment."""
    out = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {i}: expected key=value, got {raw!r}", code=USAGE_EXIT)
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _parse_scalar(value)
    return out


def _parse_scalar(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        if "," in value:
            return [_parse_scalar(v.strip()) for v in value.split(",")]
        return value


def load_config(path: str | None, overrides: list) -> dict:
    cfg = {}
    if path:
        try:
            with open(path) as fh:
                cfg.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}", code=USAGE_EXIT)
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}", code=USAGE_EXIT)
        key, value = item.split("=", 1)
        cfg[key.strip()] = _parse_scalar(value.strip())
    return cfg


def atomic_write(path: str, content: str):
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_run_meta(outdir: str, command: str, cfg: dict, outputs: list):
    meta = {
        "tool": "graphlds",
        "version": graphlds.__version__,
        "command": command,
        "config": cfg,
        "outputs": outputs,
    }
    atomic_write(os.path.join(outdir, "run_meta.json"), json.dumps(meta, indent=2))


def _graph_from_config(cfg: dict) -> Graph:
    kind = cfg.get("graph.kind", "path")
    params = {}
    for key in ("m", "nx", "ny", "p", "seed", "hub", "k"):
        if f"graph.{key}" in cfg:
            params[key] = cfg[f"graph.{key}"]
    try:
        return build_graph(kind, **params)
    except KeyError as exc:
        raise CliError(f"graph spec missing parameter: {exc}", code=USAGE_EXIT)
    except GraphError as exc:
        raise CliError(str(exc), code=USAGE_EXIT)


def _field_from_config(cfg: dict):
    kind = cfg.get("field.kind", "piecewise")
    s = float(cfg.get("field.s", 0.5))
    if kind == "piecewise":
        return PiecewiseField(s=s)
    if kind == "smooth":
        return SmoothField(s=s, omega=float(cfg.get("field.omega", 1.0)))
    raise CliError(f"unknown field kind {kind!r}", code=USAGE_EXIT)


def _solver_from_config(cfg: dict) -> SolverOptions:
    return SolverOptions(
        rho=float(cfg.get("solver.rho", 1.0)),
        max_iter=int(cfg.get("solver.max_iter", 5000)),
        tol_primal=float(cfg.get("solver.tol_primal", 1e-8)),
        tol_dual=float(cfg.get("solver.tol_dual", 1e-8)),
        kkt_tol=float(cfg.get("solver.kkt_tol", 1e-6)),
    )


def _split_from_config(cfg: dict, default_buffer: int = 100) -> SplitSpec:
    return SplitSpec(
        T_train=int(cfg.get("split.T_train", 16)),
        T_val=int(cfg.get("split.T_val", 4)),
        T_test=int(cfg.get("split.T_test", 8)),
        buffer=int(cfg.get("split.buffer", default_buffer)),
    )


def cmd_simulate(cfg: dict, outdir: str) -> list:
    g = _graph_from_config(cfg)
    truth = gen_ground_truth(g, _field_from_config(cfg), seed=int(cfg.get("sim.seed", 0)))
    panel = simulate_panel(truth, int(cfg.get("sim.T_total", 32)), int(cfg.get("sim.seed", 0)))
    atomic_write(os.path.join(outdir, "panel.csv"), panel.to_csv())
    atomic_write(os.path.join(outdir, "ensemble.json"), truth.to_json())
    atomic_write(os.path.join(outdir, "graph.json"), g.to_json())
    return ["panel.csv", "ensemble.json", "graph.json"]


def _load_panel(cfg: dict) -> TrajectoryPanel:
    path = cfg.get("fit.panel")
    if not path:
        raise CliError("fit requires fit.panel = <panel.csv path>", code=USAGE_EXIT)
    try:
        with open(path) as fh:
            return TrajectoryPanel.from_csv(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read panel {path}: {exc}")
    except (ValueError, IndexError) as exc:
        raise CliError(f"parse error in panel {path}: {exc}")


def _load_graph_file(cfg: dict) -> Graph:
    path = cfg.get("fit.graph")
    if not path:
        raise CliError("this command requires fit.graph = <graph.json path>", code=USAGE_EXIT)
    try:
        with open(path) as fh:
            return Graph.from_json(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read graph {path}: {exc}")
    except (ValueError, KeyError, GraphError) as exc:
        raise CliError(f"parse error in graph {path}: {exc}")


def cmd_fit(cfg: dict, outdir: str, strict: bool = False) -> list:
    panel = _load_panel(cfg)
    method = cfg.get("fit.method", "graph_tv")
    opts = _solver_from_config(cfg)
    outputs = []
    if method in ("graph_tv", "laplacian"):
        g = _load_graph_file(cfg)
    if method == "graph_tv" and "fit.grid_size" in cfg:
        split = _split_from_config(cfg)
        train, val, _ = make_splits(panel, split)
        path = regularization_path(build_design(train), g, int(cfg["fit.grid_size"]), val, opts=opts)
        fit = path.selected
        atomic_write(
            os.path.join(outdir, "path.json"),
            json.dumps(
                {
                    "lambdas": [float(v) for v in path.lambdas],
                    "selection_metric": [float(v) for v in path.selection_metric],
                    "selected_index": path.selected_index,
                }
            ),
        )
        outputs.append("path.json")
    else:
        ds = build_design(panel)
        lam = float(cfg.get("fit.lambda", 0.0))
        if method == "graph_tv":
            fit = fit_graph_tv(ds, g, lam, opts=opts)
        elif method == "laplacian":
            fit = fit_laplacian(ds, g, lam)
        elif method == "ols_ind":
            fit = fit_ols_individual(ds)
        elif method == "ols_pooled":
            fit = fit_ols_pooled(ds)
        elif method == "group_lasso":
            fit = fit_group_lasso(ds, lam)
        else:
            raise CliError(f"unknown fit method {method!r}", code=USAGE_EXIT)
    if strict and not fit.converged:
        raise CliError(f"solver did not converge: flags={fit.flags}", code=SOLVER_EXIT)
    atomic_write(os.path.join(outdir, "fit.json"), fit.to_json())
    outputs.append("fit.json")
    return outputs


def cmd_sweep(cfg: dict, outdir: str, jobs: int = 1) -> list:
    values = cfg.get("sweep.values", [4, 8, 16])
    if not isinstance(values, list):
        values = [values]
    methods = cfg.get("sweep.methods", list(SweepConfig.__dataclass_fields__["methods"].default))
    if isinstance(methods, str):
        methods = [methods]
    sweep = SweepConfig(
        axis=cfg.get("sweep.axis", "T"),
        values=tuple(values),
        topology=cfg.get("graph.kind", "path"),
        topology_params={k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("graph.") and k != "graph.kind" and k != "graph.m"},
        field_kind=cfg.get("field.kind", "piecewise"),
        field_s=float(cfg.get("field.s", 0.5)),
        field_omega=float(cfg.get("field.omega", 1.0)),
        n_rep=int(cfg.get("sweep.n_rep", 15)),
        base_seed=int(cfg.get("sweep.base_seed", 0)),
        methods=tuple(methods),
        split=_split_from_config(cfg),
        grid_size=int(cfg.get("sweep.grid_size", 50)),
        solver=_solver_from_config(cfg),
        m=int(cfg.get("graph.m", 64)),
        record_timing=bool(cfg.get("sweep.record_timing", True)),
    )
    rows, aggs = run_sweep(sweep, jobs=jobs)
    atomic_write(os.path.join(outdir, "results.csv"), rows_to_csv(rows, sweep))
    atomic_write(os.path.join(outdir, "aggregate.csv"), aggregates_to_csv(aggs))
    return ["results.csv", "aggregate.csv"]


def cmd_theory(cfg: dict, outdir: str) -> list:
    g = _graph_from_config(cfg)
    truth = gen_ground_truth(g, _field_from_config(cfg), seed=int(cfg.get("sim.seed", 0)))
    report = build_theory_report(
        g,
        truth,
        T=int(cfg.get("theory.T", 10)),
        delta=float(cfg.get("theory.delta", 0.1)),
        v=float(cfg.get("theory.v", 1.0)),
        regime=cfg.get("theory.regime", "smooth"),
        constants=BoundConstants(
            c_zeta1=float(cfg.get("theory.c_zeta1", 1.0)),
            c_zeta2=float(cfg.get("theory.c_zeta2", 1.0)),
            c_f2=float(cfg.get("theory.c_f2", 1.0)),
            c_f3=float(cfg.get("theory.c_f3", 1.0)),
        ),
        c_margin=float(cfg.get("theory.c_margin", 1.0)),
        C_condition=float(cfg.get("theory.C_condition", 1.0)),
        c1_lambda=float(cfg.get("theory.c1", 1.0)),
    )
    atomic_write(os.path.join(outdir, "theory.json"), report.to_json())
    return ["theory.json"]


def cmd_ingest(cfg: dict, outdir: str) -> list:
    path = cfg.get("ingest.stations")
    if not path:
        raise CliError("ingest requires ingest.stations = <csv path>", code=USAGE_EXIT)
    variable = cfg.get("ingest.variable", "custom")
    try:
        table = load_station_csv(path, variable=variable)
        table = preprocess_series(
            table,
            transform=cfg.get("ingest.transform", transform_for_variable(variable)),
            year=int(cfg["ingest.year"]) if "ingest.year" in cfg else None,
            coverage_min=float(cfg.get("ingest.coverage_min", 0.75)),
            year_missing_max=float(cfg.get("ingest.year_missing_max", 0.05)),
        )
        panel = to_lds_panel(table)
        g = station_graph(table, k=int(cfg.get("ingest.knn_k", 5)))
    except (IngestError, OSError) as exc:
        raise CliError(str(exc))
    atomic_write(os.path.join(outdir, "panel.csv"), panel.to_csv())
    atomic_write(os.path.join(outdir, "graph.json"), g.to_json())
    if not g.is_connected():
        atomic_write(os.path.join(outdir, "graph_disconnected.flag"), "station kNN graph is disconnected\n")
        return ["panel.csv", "graph.json", "graph_disconnected.flag"]
    return ["panel.csv", "graph.json"]


def reproduce_sweep_configs(n_rep: int = 15, grid_size: int = 50, base_seed: int = 0):
    """The two ordering-reproduction sweeps on the path topology."""
    common = dict(
        topology="path",
        field_kind="piecewise",
        field_s=0.5,
        n_rep=n_rep,
        base_seed=base_seed,
        methods=("graph_tv", "ols_ind"),
        grid_size=grid_size,
        m=64,
    )
    t_sweep = SweepConfig(axis="T", values=(4, 8, 16), split=SplitSpec(T_train=16), **common)
    m_sweep = SweepConfig(axis="m", values=(16, 36, 64), split=SplitSpec(T_train=10), **common)
    return t_sweep, m_sweep


def cmd_reproduce(cfg: dict, outdir: str, jobs: int = 1) -> list:
    t_sweep, m_sweep = reproduce_sweep_configs(
        n_rep=int(cfg.get("sweep.n_rep", 15)),
        grid_size=int(cfg.get("sweep.grid_size", 50)),
        base_seed=int(cfg.get("sweep.base_seed", 0)),
    )
    outputs = []
    for name, sweep in (("time_sweep", t_sweep), ("nodes_sweep", m_sweep)):
        rows, aggs = run_sweep(sweep, jobs=jobs)
        atomic_write(os.path.join(outdir, f"{name}_results.csv"), rows_to_csv(rows, sweep))
        atomic_write(os.path.join(outdir, f"{name}_aggregate.csv"), aggregates_to_csv(aggs))
        outputs += [f"{name}_results.csv", f"{name}_aggregate.csv"]
    return outputs


def build_parser() -> _Parser:
    parser = _Parser(prog="graphlds", description=__doc__)
    parser.add_argument("--version", action="version", version=f"graphlds {graphlds.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "sweep", "theory", "ingest", "reproduce"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (wins over the file)")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--strict", action="store_true", help="exit 3 on solver non-convergence")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --version and argparse-internal exits
        return int(exc.code or 0)
    outdir = args.out
    try:
        cfg = load_config(args.config, args.set)
        os.makedirs(outdir, exist_ok=True)
        # provenance first: resolved config lands on disk before any work
        write_run_meta(outdir, args.command, cfg, outputs=[])
        if args.command == "simulate":
            outputs = cmd_simulate(cfg, outdir)
        elif args.command == "fit":
            outputs = cmd_fit(cfg, outdir, strict=args.strict)
        elif args.command == "sweep":
            outputs = cmd_sweep(cfg, outdir, jobs=args.jobs)
        elif args.command == "theory":
            outputs = cmd_theory(cfg, outdir)
        elif args.command == "ingest":
            outputs = cmd_ingest(cfg, outdir)
        elif args.command == "reproduce":
            outputs = cmd_reproduce(cfg, outdir, jobs=args.jobs)
        else:  # pragma: no cover - argparse enforces the choices
            raise CliError(f"unknown command {args.command!r}", code=USAGE_EXIT)
        write_run_meta(outdir, args.command, cfg, outputs)
        return 0
    except CliError as exc:
        _mark_failed(outdir, str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (GraphError, FieldError, IngestError, ValueError) as exc:
        _mark_failed(outdir, str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


def _mark_failed(outdir: str, message: str):
    try:
        os.makedirs(outdir, exist_ok=True)
        atomic_write(os.path.join(outdir, ".failed"), message + "\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
