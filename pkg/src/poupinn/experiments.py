"""Registered experiments, evaluation metrics and field export.

Each experiment names a case from :mod:`poupinn.pde`, a training mode,
network shapes and a :class:`~poupinn.train.TrainConfig`. Running one writes
a self-contained directory::

    <out>/<name>/config.json
    <out>/<name>/history.csv
    <out>/<name>/checkpoint.json
    <out>/<name>/fields/<kind>.csv
    <out>/<name>/metrics.json
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import jsonio
from . import network as nw
from . import pde, train
from .numcore import autodiff as ad
from .pou import LearnedField, PartitionModel, conductivity, hard_partition
from .train import CollocationSpec, TrainConfig

log = logging.getLogger(__name__)

SEED = 12345
GRID_RESOLUTION = (101, 101)
FIELD_KINDS = ("u", "K", "partition", "error", "residual")
FAILURE_MARKER = "FAILED"


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    mode: str
    case: str
    config: TrainConfig
    u_hidden: Optional[tuple] = None
    pou_hidden: Optional[tuple] = None
    n_partitions: Optional[int] = None
    n_train_points: int = 2048
    boundary_points_per_edge: int = 0
    chain_links: int = 1
    interface_band: Optional[float] = None
    thresholds: dict = field(default_factory=dict)
    notes: str = ""

    def u_spec(self):
        return nw.mlp(2, self.u_hidden, 1, "linear") if self.u_hidden is not None else None

    def pou_spec(self):
        if self.pou_hidden is None:
            return None
        return nw.mlp(2, self.pou_hidden, self.n_partitions, "softmax")

    def summary(self) -> dict:
        c = self.config
        return {
            "name": self.name,
            "mode": self.mode,
            "case": self.case,
            "epochs": c.epochs,
            "lr": c.lr,
            "l2_lambda": c.l2_lambda,
            "seed": c.seed,
            "batch_size": c.batch_size,
            "bc_mode": c.bc_mode,
            "u_hidden": list(self.u_hidden) if self.u_hidden else None,
            "pou_hidden": list(self.pou_hidden) if self.pou_hidden else None,
            "n_partitions": self.n_partitions,
            "chain_links": self.chain_links,
        }

    def resolved(self, config: Optional[TrainConfig] = None) -> dict:
        d = self.summary()
        d["config"] = (config or self.config).to_dict()
        d["n_train_points"] = self.n_train_points
        d["boundary_points_per_edge"] = self.boundary_points_per_edge
        d["interface_band"] = self.interface_band
        d["notes"] = self.notes
        return d


# Supervised partition fits count an epoch as one pass in minibatches of 32.
POU_BATCH = 32


def _pou(name, epochs, lr, hidden, n, l2, band, batch=POU_BATCH, **kw):
    cfg = TrainConfig(epochs=epochs, lr=lr, l2_lambda=l2, seed=SEED, batch_size=batch)
    return ExperimentSpec(
        name,
        "pou-supervised",
        name,
        cfg,
        pou_hidden=tuple(hidden),
        n_partitions=n,
        interface_band=band,
        **kw,
    )


def _poupinn(name, notes):
    cfg = TrainConfig(
        epochs=6000,
        lr=0.001,
        l2_lambda=0.0001,
        seed=SEED,
        bc_mode="soft",
        collocation=CollocationSpec("grid", 1024, 256),
    )
    return ExperimentSpec(
        name,
        "poupinn-joint",
        name,
        cfg,
        u_hidden=(40, 40, 40, 40),
        pou_hidden=(40, 40, 40, 40),
        n_partitions=2,
        interface_band=0.02,
        thresholds={"loss_reduction_orders": 3.0, "ratio_tolerance": 0.25},
        notes=notes,
    )


def _build_registry():
    return (
        ExperimentSpec(
            "pinn-ex1",
            "pinn-forward",
            "pinn-ex1",
            TrainConfig(epochs=1000, lr=0.005, seed=SEED, bc_mode="hard-dirichlet"),
            u_hidden=(40, 40),
            thresholds={"relative_l2": 2e-2},
        ),
        ExperimentSpec(
            "pinn-ex2",
            "pinn-forward",
            "pinn-ex2",
            TrainConfig(epochs=1000, lr=0.005, seed=SEED, bc_mode="soft"),
            u_hidden=(40, 40),
            thresholds={"relative_l2": 2e-2},
        ),
        _pou("pou-ex1", 1000, 0.0005, (40,), 2, 0.0, 0.03, thresholds={"accuracy": 0.99, "conductivity_error": 0.05}),
        _pou(
            "pou-ex2",
            600,
            0.00025,
            (40,),
            4,
            0.000001,
            0.03,
            notes="four partitions on the two-level triangle field",
        ),
        _pou(
            "pou-ex3",
            10000,
            0.000125,
            (40, 40, 40, 40),
            4,
            0.000001,
            0.02,
            batch=None,
            chain_links=8,
            notes="transfer-learning chain: cold start plus seven warm restarts",
        ),
        _pou("pou-ex4", 3000, 0.000125, (40, 40), 4, 0.000001, 0.02, batch=None, boundary_points_per_edge=64),
        _pou("pou-ex5", 100, 0.00025, (40,), 2, 0.000001, 0.02, thresholds={"accuracy": 0.99, "conductivity_error": 0.05}),
        _pou("pou-ex6", 100, 0.00025, (40,), 2, 0.000001, 0.02, thresholds={"accuracy": 0.99, "conductivity_error": 0.05}),
        _poupinn("poupinn-ex1", "strip conductivity (1 | 4) taken as ground truth"),
        _poupinn("poupinn-ex2", "inverted strip conductivity (4 | 1) taken as ground truth"),
    )


_REGISTRY = {e.name: e for e in _build_registry()}


def registry() -> list:
    return list(_REGISTRY.values())


def get_experiment(name: str) -> ExperimentSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown experiment {name!r}; known: {', '.join(_REGISTRY)}") from None


# grids and metrics


@dataclass
class FieldGrid:
    nx: int
    ny: int
    points: np.ndarray
    values: np.ndarray
    kind: str

    def write_csv(self, path) -> None:
        integer = self.kind == "partition"
        lines = ["x,y,value"]
        for (x, y), v in zip(self.points, self.values):
            val = str(int(v)) if integer else format(float(v), ".17g")
            lines.append(f"{format(x, '.17g')},{format(y, '.17g')},{val}")
        Path(path).write_text("\n".join(lines) + "\n")


def grid_points(nx: int, ny: int) -> np.ndarray:
    """Row-major points over ``[0, 1]^2`` (``y`` rows, ``x`` fastest), boundary included."""
    if nx < 2 or ny < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _as_points(grid):
    if isinstance(grid, FieldGrid):
        return grid.points
    if isinstance(grid, tuple) and len(grid) == 2 and all(isinstance(g, int) for g in grid):
        return grid_points(*grid)
    return np.asarray(grid, dtype=np.float64).reshape(-1, 2)


def relative_l2(u_model: Callable, u_true: Callable, grid) -> float:
    """``||u - u_true|| / ||u_true||`` over grid points (absolute if ``u_true`` vanishes)."""
    X = _as_points(grid)
    if len(X) == 0:
        raise ValueError("empty grid")
    diff = np.asarray(u_model(X)) - np.asarray(u_true(X))
    num = np.sqrt(np.sum(diff * diff))
    den = np.sqrt(np.sum(np.asarray(u_true(X)) ** 2))
    return float(num / den) if den > 0 else float(num)


def partition_metrics(model: PartitionModel, truth, grid, interface_band: float) -> dict:
    """Agreement of the hard partition with the true regions away from interfaces.

    Partitions are matched one-to-one to regions to maximise agreement. A point
    counts as correct when its partition is matched to its true region and that
    partition's level is the learned level nearest the true conductivity.
    """
    X = _as_points(grid)
    keep = truth.gap(X) > interface_band
    X = X[keep]
    labels = hard_partition(model, X)
    regions = truth.region(X)
    levels = model.levels()
    n_part, n_reg = model.n_partitions, len(truth.levels)

    # a partition can only be right for a region if its level is the learned
    # level nearest that region's conductivity
    nearest = np.argmin(np.abs(levels[None, :] - np.asarray(truth.levels)[:, None]), axis=1)
    level_ok = levels[:, None] == levels[nearest][None, :]
    counts = np.zeros((n_part, n_reg))
    np.add.at(counts, (labels, regions), 1.0)
    rows, cols = linear_sum_assignment(-(counts * level_ok))
    assigned = np.full(n_part, -1)
    assigned[rows] = cols

    correct = (assigned[labels] == regions) & level_ok[labels, regions]
    accuracy = float(np.mean(correct)) if len(X) else float("nan")

    errors = []
    for r, k in enumerate(truth.levels):
        p = np.flatnonzero(assigned == r)
        errors.append(float(abs(levels[p[0]] - k) / k) if p.size else float("inf"))
    region_partition = [int(np.flatnonzero(assigned == r)[0]) if np.any(assigned == r) else -1 for r in range(n_reg)]
    return {
        "accuracy": accuracy,
        "conductivity_errors": errors,
        "true_levels": list(truth.levels),
        "learned_levels": levels.tolist(),
        "region_partition": region_partition,
        "evaluated_points": int(len(X)),
    }


def conductivity_ratio(metrics: dict) -> Optional[float]:
    """Learned level ratio between the highest- and lowest-conductivity regions."""
    true = np.asarray(metrics["true_levels"])
    hi, lo = int(np.argmax(true)), int(np.argmin(true))
    p_hi, p_lo = metrics["region_partition"][hi], metrics["region_partition"][lo]
    if p_hi < 0 or p_lo < 0:
        return None
    levels = metrics["learned_levels"]
    return float(levels[p_hi] / levels[p_lo])


def export_grid(evaluator: Callable, kind: str, resolution=GRID_RESOLUTION, path=None) -> FieldGrid:
    """Evaluate a field on a grid; optionally write ``x,y,value`` CSV to ``path``."""
    if kind not in FIELD_KINDS:
        raise ValueError(f"kind must be one of {FIELD_KINDS}")
    nx, ny = resolution
    X = grid_points(nx, ny)
    values = np.asarray(evaluator(X), dtype=np.float64)
    grid = FieldGrid(nx, ny, X, values, kind)
    if path is not None:
        grid.write_csv(path)
    return grid


# running


def build_models(exp: ExperimentSpec, seed: int) -> train.Models:
    u_spec = exp.u_spec()
    u = nw.init_glorot(u_spec, train.rng_for(seed, train.STREAM_U_INIT)) if u_spec else None
    pou_spec = exp.pou_spec()
    pou = PartitionModel.create(pou_spec, train.rng_for(seed, train.STREAM_POU_INIT)) if pou_spec else None
    return train.Models(u_spec, u, pou)


def training_data(exp: ExperimentSpec, case: pde.ManufacturedCase, seed: int):
    """Uniform random samples of the analytic conductivity, plus optional edge points."""
    rng = train.rng_for(seed, train.STREAM_DATA)
    X = rng.uniform(0.0, 1.0, size=(exp.n_train_points, 2))
    if exp.boundary_points_per_edge:
        t = np.linspace(0.0, 1.0, exp.boundary_points_per_edge)
        X = np.concatenate([X] + [train._edge_points(e, t) for e in pde.EDGES])
    return X, case.field.value(X)


def build_problem(exp: ExperimentSpec, case, config: TrainConfig):
    if exp.mode == "pou-supervised":
        X, targets = training_data(exp, case, config.seed)
        return train.SupervisedProblem(X, targets)
    collocation = train.sample_collocation(config.collocation, config.seed)
    return train.PinnProblem(case, collocation, joint=exp.mode == "poupinn-joint")


def field_evaluators(exp: ExperimentSpec, case, models: train.Models, bc_mode: str) -> dict:
    """Grid evaluators for every field kind meaningful in this experiment's mode."""
    out = {}
    if models.pou is not None:
        out["K"] = lambda X: ad.data(conductivity(models.pou, X))
        out["partition"] = lambda X: hard_partition(models.pou, X)
    else:
        out["K"] = case.field.value
    if models.u is not None:
        def u_jet(X):
            return train.solution_jet(models, X, bc_mode, case.dirichlet_edges())

        out["u"] = lambda X: u_jet(X).v
        out["error"] = lambda X: np.abs(u_jet(X).v - case.u_value(X))
        k_field = LearnedField(models.pou) if models.pou is not None else case.field

        def residual(X):
            values = np.full(len(X), np.nan)
            ok = ~_interface_points(case.field, X)
            if np.any(ok):
                Xi = X[ok]
                values[ok] = pde.residual_interior(u_jet(Xi), k_field.jet(Xi), case.forcing(Xi))
            return values

        out["residual"] = residual
    return out


def _interface_points(fld, X):
    return fld.on_interface(X) if hasattr(fld, "on_interface") else np.zeros(len(X), dtype=bool)


def compute_metrics(exp: ExperimentSpec, case, models: train.Models, history, final_loss, bc_mode) -> dict:
    X = grid_points(*GRID_RESOLUTION)
    metrics = {
        "experiment": exp.name,
        "mode": exp.mode,
        "epochs_run": len(history),
        "initial_loss": history[0][1] if history else None,
        "final_loss": final_loss,
    }
    if models.u is not None:
        ev = field_evaluators(exp, case, models, bc_mode)
        metrics["relative_l2"] = relative_l2(ev["u"], case.u_value, X)
    if models.pou is not None:
        band = exp.interface_band if exp.interface_band is not None else 0.0
        pm = partition_metrics(models.pou, case.field, X, band)
        metrics.update(pm)
        metrics["interface_band"] = band
        ratio = conductivity_ratio(pm)
        if ratio is not None and len(case.field.levels) == 2:
            true_ratio = max(case.field.levels) / min(case.field.levels)
            metrics["conductivity_ratio"] = ratio
            metrics["true_conductivity_ratio"] = true_ratio
            metrics["ratio_relative_error"] = abs(ratio - true_ratio) / true_ratio
    if history and final_loss is not None and final_loss > 0:
        metrics["loss_reduction_orders"] = float(np.log10(history[0][1] / final_loss))
    return metrics


def _case_for(exp: ExperimentSpec):
    return pde.get_case(exp.case)


def run_experiment(
    name: str,
    overrides: Optional[dict] = None,
    outdir="runs",
    *,
    config: Optional[TrainConfig] = None,
    run_dir=None,
    progress=None,
) -> Path:
    """Train one experiment and write its run directory; returns the directory."""
    exp = get_experiment(name)
    cfg = train.apply_overrides(config or exp.config, overrides or {})
    run_dir = Path(run_dir) if run_dir is not None else Path(outdir) / name
    (run_dir / "fields").mkdir(parents=True, exist_ok=True)
    marker = run_dir / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    jsonio.write(run_dir / "config.json", exp.resolved(cfg))

    case = _case_for(exp)
    models = build_models(exp, cfg.seed)
    problem = build_problem(exp, case, cfg)
    try:
        result = train.train_loop(problem, models, cfg, progress=progress)
    except train.TrainingError as exc:
        train.write_history(run_dir / "history.csv", exc.history)
        if exc.checkpoint is not None:
            train.save_checkpoint(run_dir / "checkpoint.json", exc.checkpoint)
        marker.write_text(f"{exc}\n")
        raise

    train.write_history(run_dir / "history.csv", result.history)
    train.save_checkpoint(run_dir / "checkpoint.json", result.checkpoint)
    for kind, fn in field_evaluators(exp, case, result.models, cfg.bc_mode).items():
        export_grid(fn, kind, GRID_RESOLUTION, run_dir / "fields" / f"{kind}.csv")
    metrics = compute_metrics(exp, case, result.models, result.history, result.final_loss, cfg.bc_mode)
    jsonio.write(run_dir / "metrics.json", metrics)
    return run_dir


def run_chain(name: str, links: int, outdir="runs", overrides: Optional[dict] = None, progress=None) -> dict:
    """Sequential warm-started runs ``link-0 .. link-(links-1)`` under ``<outdir>/<name>``."""
    if links < 1:
        raise ValueError("links must be at least 1")
    base = Path(outdir) / name
    summary = {"experiment": name, "links": []}
    previous = None
    for k in range(links):
        ov = dict(overrides or {})
        if previous is not None:
            ov["init_from"] = str(previous / "checkpoint.json")
            ov["resume"] = "false"
        run_dir = run_experiment(name, ov, run_dir=base / f"link-{k}", progress=progress)
        hist = train.read_history(run_dir / "history.csv")
        metrics = jsonio.read(run_dir / "metrics.json")
        summary["links"].append(
            {"link": k, "initial_loss": hist[0][1], "final_loss": metrics["final_loss"], "run_dir": f"link-{k}"}
        )
        previous = run_dir
    jsonio.write(base / "chain.json", summary)
    return summary


def evaluate_checkpoint(checkpoint_path, name: str) -> dict:
    """Metrics of a saved checkpoint against an experiment's case."""
    exp = get_experiment(name)
    ckpt = train.load_checkpoint(checkpoint_path)
    models = train.models_from_checkpoint(ckpt)
    cfg = TrainConfig.from_dict(ckpt["config"])
    case = _case_for(exp)
    problem = build_problem(exp, case, cfg)
    loss, _ = problem.objective(models, cfg)(models.flatten())
    return compute_metrics(exp, case, models, [], float(ad.data(loss)), cfg.bc_mode)


def export_checkpoint(checkpoint_path, kind: str, resolution, path, name: Optional[str] = None) -> FieldGrid:
    """Export a field of a saved checkpoint; the experiment defaults to the checkpoint's mode."""
    ckpt = train.load_checkpoint(checkpoint_path)
    models = train.models_from_checkpoint(ckpt)
    cfg = TrainConfig.from_dict(ckpt["config"])
    if name is None:
        run_cfg = Path(checkpoint_path).with_name("config.json")
        if not run_cfg.exists():
            raise ValueError("cannot infer the experiment; pass it explicitly")
        name = jsonio.read(run_cfg)["name"]
    exp = get_experiment(name)
    evaluators = field_evaluators(exp, _case_for(exp), models, cfg.bc_mode)
    if kind not in evaluators:
        raise ValueError(f"field {kind!r} is not available for {exp.mode} runs")
    return export_grid(evaluators[kind], kind, resolution, path)
