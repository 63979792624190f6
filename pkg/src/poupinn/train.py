"""Loss assembly, collocation sampling, Adam and the training loop.

Three modes share one loop:

* ``pinn-forward``: a solution network ``u`` against a fixed conductivity;
* ``pou-supervised``: a partition model fitted to conductivity samples;
* ``poupinn-joint``: ``u`` and the partition model trained together from the
  PDE and boundary residuals alone.

All parameters of a run live in one flat vector (``u`` network, then the
partition network, then the log-conductivities), which is what the optimizer
and the checkpoints see.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import jsonio
from . import network as nw
from . import pde
from .numcore import autodiff as ad
from .numcore.autodiff import NonFiniteError
from .numcore.jet import Jet2
from .pou import PartitionModel, conductivity, conductivity_jet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_HEADER = ("epoch", "loss_total", "loss_pde", "loss_bc", "loss_l2")
MODES = ("pinn-forward", "pou-supervised", "poupinn-joint")
BC_MODES = ("soft", "hard-dirichlet")

# independent random streams derived from the run seed
STREAM_U_INIT, STREAM_POU_INIT, STREAM_DATA, STREAM_BATCHES = range(4)


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


class TrainingError(RuntimeError):
    """Training stopped early; ``checkpoint`` holds the last finite state."""

    def __init__(self, message, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history or []


# configuration


@dataclass
class CollocationSpec:
    kind: str = "grid"
    n_interior: int = 4096
    n_boundary: int = 256

    def validate(self):
        if self.kind not in ("grid", "random"):
            raise ValueError(f"collocation kind must be grid or random, not {self.kind!r}")
        if self.n_interior < 1 or self.n_boundary < 4:
            raise ValueError("collocation counts must be positive (at least one point per edge)")
        if self.n_boundary % 4:
            raise ValueError("n_boundary must split evenly over the four edges")
        if self.kind == "grid" and round(np.sqrt(self.n_interior)) ** 2 != self.n_interior:
            raise ValueError("grid collocation needs a square interior count")


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float = 0.0
    seed: int = 12345
    collocation: CollocationSpec = field(default_factory=CollocationSpec)
    bc_mode: str = "soft"
    bc_weight: float = 1.0
    batch_size: Optional[int] = None
    init_from: Optional[str] = None
    resume: bool = False

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.bc_mode not in BC_MODES:
            raise ValueError(f"bc_mode must be one of {BC_MODES}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.resume and not self.init_from:
            raise ValueError("resume requires init_from")
        self.collocation.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        coll = d.pop("collocation", {})
        if isinstance(coll, dict):
            bad = set(coll) - {f.name for f in dataclasses.fields(CollocationSpec)}
            if bad:
                raise KeyError(f"unknown collocation keys: {sorted('collocation.' + k for k in bad)}")
            coll = CollocationSpec(**coll)
        return cls(collocation=coll, **d)

    def digest(self) -> str:
        return hashlib.sha256(jsonio.dumps(self.to_dict()).encode()).hexdigest()[:16]


def _coerce(value, current, name):
    if isinstance(value, str):
        text = value.strip()
        if text.lower() in ("none", "null"):
            return None
        if isinstance(current, bool) or name == "resume":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"{name}: expected a boolean, got {value!r}")
        if isinstance(current, int) or name == "batch_size":
            return int(text)
        if isinstance(current, float):
            return float(text)
        return text
    return value


def apply_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    """Return a copy with dotted ``key -> value`` overrides applied and validated.

    Unknown keys raise ``KeyError``; unparsable values raise ``ValueError``.
    """
    d = config.to_dict()
    for key, value in overrides.items():
        parts = key.split(".")
        target = d
        for p in parts[:-1]:
            if p not in target or not isinstance(target[p], dict):
                raise KeyError(f"unknown config key {key!r}")
            target = target[p]
        leaf = parts[-1]
        if leaf not in target or isinstance(target[leaf], dict):
            raise KeyError(f"unknown config key {key!r}")
        target[leaf] = _coerce(value, target[leaf], leaf)
    return TrainConfig.from_dict(d).validate()


# collocation


@dataclass
class CollocationSet:
    interior: np.ndarray
    boundary: dict  # edge -> (m, 2)

    def boundary_points(self):
        """All boundary points in edge order with their edge labels."""
        pts = [self.boundary[e] for e in pde.EDGES]
        labels = [np.full(len(p), i) for i, p in enumerate(pts)]
        return np.concatenate(pts), np.concatenate(labels)


def _edge_points(edge: str, t: np.ndarray) -> np.ndarray:
    fixed = np.full_like(t, 0.0 if edge.endswith("0") else 1.0)
    return np.stack([fixed, t] if edge.startswith("x") else [t, fixed], axis=1)


def sample_collocation(spec: CollocationSpec, seed: int) -> CollocationSet:
    """Interior and per-edge boundary points; cell-centred grid or uniform random."""
    spec.validate()
    per_edge = spec.n_boundary // 4
    if spec.kind == "grid":
        n = int(round(np.sqrt(spec.n_interior)))
        t = (np.arange(n) + 0.5) / n
        interior = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        s = (np.arange(per_edge) + 0.5) / per_edge
        boundary = {e: _edge_points(e, s) for e in pde.EDGES}
    else:
        rng = rng_for(seed, STREAM_DATA)
        interior = rng.uniform(0.0, 1.0, size=(spec.n_interior, 2))
        while np.any((interior == 0.0) | (interior == 1.0)):
            bad = np.any((interior == 0.0) | (interior == 1.0), axis=1)
            interior[bad] = rng.uniform(0.0, 1.0, size=(int(bad.sum()), 2))
        boundary = {e: _edge_points(e, rng.uniform(0.0, 1.0, per_edge)) for e in pde.EDGES}
    return CollocationSet(interior, boundary)


# models


@dataclass
class Models:
    """Trainable networks of a run; either part may be absent."""

    u_spec: Optional[tuple] = None
    u: Optional[nw.NetworkParams] = None
    pou: Optional[PartitionModel] = None

    def sizes(self) -> tuple[int, int]:
        nu = nw.n_params(self.u_spec) if self.u_spec is not None else 0
        npou = self.pou.n_params() if self.pou is not None else 0
        return nu, npou

    def flatten(self) -> np.ndarray:
        parts = []
        if self.u is not None:
            parts.append(self.u.flatten())
        if self.pou is not None:
            parts.append(self.pou.flatten())
        return np.concatenate(parts) if parts else np.zeros(0)

    def unflatten(self, flat) -> "Models":
        nu, _ = self.sizes()
        u = nw.NetworkParams.from_flat(self.u_spec, flat[:nu]) if self.u_spec is not None else None
        pou = PartitionModel.from_flat(self.pou.spec, flat[nu:]) if self.pou is not None else None
        return Models(self.u_spec, u, pou)

    def weight_layers(self) -> list:
        layers = []
        if self.u is not None:
            layers += list(self.u.layers)
        if self.pou is not None:
            layers += list(self.pou.zeta.layers)
        return layers


# losses


def loss_pde(residuals):
    """Mean squared interior residual."""
    return ad.mean(residuals * residuals)


def loss_bc(residuals):
    """Mean squared boundary residual (Dirichlet and Neumann points pooled)."""
    return ad.mean(residuals * residuals)


def loss_total(parts) -> float:
    total = 0.0
    for p in parts:
        total = total + p
    return total


def _distance_factor(X: np.ndarray, edge: str) -> Jet2:
    axis = 0 if edge.startswith("x") else 1
    coord = X[:, axis]
    one, zero = np.ones(len(X)), np.zeros(len(X))
    sign = 1.0 if edge.endswith("0") else -1.0
    value = coord if sign > 0 else 1.0 - coord
    gx = sign * one if axis == 0 else zero
    gy = sign * one if axis == 1 else zero
    return Jet2(value, gx, gy, zero, zero, zero)


def hard_dirichlet_ansatz(raw: Jet2, x, edges=pde.EDGES) -> Jet2:
    """``D(x) * raw(x)`` with ``D`` vanishing on every edge in ``edges``.

    ``D = x(1-x)y(1-y)`` for all four edges, ``x(1-x)`` for the two x-edges.
    Only homogeneous Dirichlet data is supported (no lifting function).
    """
    X = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    d = None
    for e in pde.EDGES:
        if e in edges:
            f = _distance_factor(X, e)
            d = f if d is None else d * f
    if d is None:
        return raw
    if np.ndim(ad.data(raw.v)) == 0:
        d = d.map(lambda c: c[0])
    return d * raw


def solution_jet(models: Models, X, bc_mode: str, dirichlet_edges=pde.EDGES) -> Jet2:
    """Jet of the solution network at a batch of points, with the ansatz if requested."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
    raw = nw.forward_jet(models.u.layers, models.u_spec, X).map(lambda c: c[:, 0])
    if bc_mode == "hard-dirichlet":
        return hard_dirichlet_ansatz(raw, X, dirichlet_edges)
    return raw


class PinnProblem:
    """Residual objective for ``pinn-forward`` (fixed ``field``) or ``poupinn-joint``."""

    def __init__(self, case: pde.ManufacturedCase, collocation: CollocationSet, joint: bool):
        if case.u_true is None or case.boundary is None:
            raise ValueError(f"case {case.name} has no PDE data")
        self.case = case
        self.joint = joint
        self.mode = "poupinn-joint" if joint else "pinn-forward"
        self.collocation = collocation
        X = collocation.interior
        self.X = X
        self.f = case.forcing(X)
        if not joint:
            self.k_interior = case.field.jet(X)
        B, labels = collocation.boundary_points()
        self.B = B
        edges = [pde.EDGES[i] for i in labels]
        self.dirichlet_mask = np.array([case.boundary.kind(e) == "dirichlet" for e in edges], dtype=float)
        normals = np.array([pde.NORMALS[e] for e in edges])
        self.nx, self.ny = normals[:, 0], normals[:, 1]
        g = np.zeros(len(B))
        for i, e in enumerate(pde.EDGES):
            sel = labels == i
            fn = case.boundary.dirichlet.get(e) or case.boundary.neumann.get(e)
            g[sel] = fn(B[sel])
        self.g = g
        if not joint:
            self.k_boundary = case.field.value(B)

    def u_jet(self, models: Models, X, bc_mode: str) -> Jet2:
        return solution_jet(models, X, bc_mode, self.case.dirichlet_edges())

    def residuals(self, models: Models, bc_mode: str):
        u = self.u_jet(models, self.X, bc_mode)
        k = conductivity_jet(models.pou, self.X) if self.joint else self.k_interior
        r_int = pde.residual_interior(u, k, self.f)
        ub = self.u_jet(models, self.B, bc_mode)
        kb = conductivity(models.pou, self.B) if self.joint else self.k_boundary
        r_d = pde.residual_dirichlet(ub.v, self.g)
        r_n = pde.residual_neumann(ub, kb, (self.nx, self.ny), self.g)
        r_bc = self.dirichlet_mask * r_d + (1.0 - self.dirichlet_mask) * r_n
        return r_int, r_bc

    def objective(self, template: Models, config: TrainConfig):
        def fn(flat, idx=None):
            models = template.unflatten(flat)
            r_int, r_bc = self.residuals(models, config.bc_mode)
            lp = loss_pde(r_int)
            lb = loss_bc(r_bc)
            l2 = nw.l2_penalty(models.weight_layers(), config.l2_lambda)
            return loss_total([lp, config.bc_weight * lb, l2]), (lp, lb, l2)

        return fn


class SupervisedProblem:
    """Mean squared misfit between the partition model's ``K`` and samples."""

    mode = "pou-supervised"

    def __init__(self, X, targets):
        self.X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
        self.targets = np.asarray(targets, dtype=np.float64)
        if len(self.X) == 0 or len(self.X) != len(self.targets):
            raise ValueError("need matching, non-empty points and targets")

    def objective(self, template: Models, config: TrainConfig):
        def fn(flat, idx=None):
            models = template.unflatten(flat)
            X, t = (self.X, self.targets) if idx is None else (self.X[idx], self.targets[idx])
            r = conductivity(models.pou, X) - t
            lp = ad.mean(r * r)
            l2 = nw.l2_penalty(models.weight_layers(), config.l2_lambda)
            return loss_total([lp, l2]), (lp, 0.0, l2)

        return fn


# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


# checkpoints


def make_checkpoint(mode, models: Models, flat, adam: AdamState, epoch, rng, config, final_loss=None) -> dict:
    trained = models.unflatten(flat)
    nets = {}
    if trained.u is not None:
        nets["u"] = {
            "spec": [l.to_dict() for l in trained.u_spec],
            "params": trained.u.flatten(),
        }
    if trained.pou is not None:
        nets["pou"] = {
            "spec": [l.to_dict() for l in trained.pou.spec],
            "n_partitions": trained.pou.n_partitions,
            "params": trained.pou.flatten(),
        }
    return {
        "version": CHECKPOINT_VERSION,
        "mode": mode,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "epoch": int(epoch),
        "final_loss": final_loss,
        "networks": nets,
        "adam": {"t": int(adam.t), "m": adam.m, "v": adam.v},
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }


def save_checkpoint(path, ckpt: dict) -> None:
    jsonio.write(path, ckpt)


def load_checkpoint(path) -> dict:
    ckpt = jsonio.read(path)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')!r}")
    return ckpt


def models_from_checkpoint(ckpt: dict) -> Models:
    nets = ckpt["networks"]
    u_spec = u = pou = None
    if "u" in nets:
        u_spec = nw.spec_from_dicts(nets["u"]["spec"])
        u = nw.NetworkParams.from_flat(u_spec, np.asarray(nets["u"]["params"], dtype=np.float64))
    if "pou" in nets:
        spec = nw.spec_from_dicts(nets["pou"]["spec"])
        pou = PartitionModel.from_flat(spec, np.asarray(nets["pou"]["params"], dtype=np.float64))
    return Models(u_spec, u, pou)


def _check_compatible(models: Models, loaded: Models):
    if (models.u_spec is None) != (loaded.u_spec is None) or (models.pou is None) != (loaded.pou is None):
        raise ValueError("checkpoint networks do not match the run's networks")
    if models.u_spec is not None and tuple(models.u_spec) != tuple(loaded.u_spec):
        raise ValueError("checkpoint u-network architecture differs")
    if models.pou is not None and tuple(models.pou.spec) != tuple(loaded.pou.spec):
        raise ValueError("checkpoint partition-network architecture differs")


def write_history(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in rows:
            w.writerow([r[0]] + [format(x, ".17g") for x in r[1:]])


def read_history(path) -> list:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != HISTORY_HEADER:
        raise ValueError("unexpected history header")
    return [(int(r[0]), *map(float, r[1:])) for r in rows[1:]]


# loop


@dataclass
class TrainResult:
    history: list
    models: Models
    checkpoint: dict
    final_loss: float


def _scalar(x) -> float:
    return float(ad.data(x))


def train_loop(problem, models: Models, config: TrainConfig, *, progress=None) -> TrainResult:
    """Run ``config.epochs`` optimizer epochs and return history and checkpoint.

    History row ``k`` holds the loss components at the parameters the epoch
    starts from, so a warm-started run's first row repeats the previous run's
    final loss. Full-batch unless ``batch_size`` is set (supervised fits only).
    """
    config.validate()
    mode = problem.mode
    if mode == "poupinn-joint" and (models.u is None or models.pou is None):
        raise ValueError("joint training needs both a u-network and a partition model")
    if config.batch_size is not None and not isinstance(problem, SupervisedProblem):
        raise ValueError("batch_size applies to supervised fits only")

    flat = models.flatten()
    adam = AdamState.zeros(flat.size)
    rng = rng_for(config.seed, STREAM_BATCHES)
    start = 0
    if config.init_from:
        ckpt = load_checkpoint(config.init_from)
        loaded = models_from_checkpoint(ckpt)
        _check_compatible(models, loaded)
        flat = loaded.flatten()
        if config.resume:
            a = ckpt["adam"]
            adam = AdamState(np.asarray(a["m"], dtype=np.float64), np.asarray(a["v"], dtype=np.float64), int(a["t"]))
            if ckpt.get("rng_state") is not None:
                rng.bit_generator.state = ckpt["rng_state"]
            start = int(ckpt["epoch"])

    objective = problem.objective(models, config)
    n = len(problem.X) if isinstance(problem, SupervisedProblem) else 0
    batched = config.batch_size is not None and config.batch_size < n
    history = []
    last_good = (flat, adam, start)

    def fail(msg, epoch):
        good_flat, good_adam, good_epoch = last_good
        ckpt = make_checkpoint(mode, models, good_flat, good_adam, good_epoch, rng, config)
        raise TrainingError(f"epoch {epoch}: {msg}", ckpt, history)

    for epoch in range(start, start + config.epochs):
        try:
            if batched:
                total, parts = objective(flat)
                if not np.isfinite(total):
                    raise NonFiniteError(f"loss is not finite: {total}")
                order = rng.permutation(n)
                for s in range(0, n, config.batch_size):
                    idx = np.sort(order[s : s + config.batch_size])
                    _, g = ad.value_and_grad(lambda p: objective(p, idx)[0], flat)
                    flat, adam = adam_step(flat, g, adam, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            else:
                total, g, parts = ad.value_and_grad(objective, flat, aux=True)
                flat, adam = adam_step(flat, g, adam, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
        except NonFiniteError as exc:
            fail(str(exc), epoch)
        if not np.all(np.isfinite(flat)):
            fail("parameters became non-finite", epoch)
        row = (epoch, _scalar(total), *(_scalar(p) for p in parts))
        history.append(row)
        last_good = (flat, adam, epoch + 1)
        if progress is not None:
            progress(row)

    final_total, _ = objective(flat)
    final_loss = _scalar(final_total)
    if not np.isfinite(final_loss):
        fail("final loss is not finite", start + config.epochs)
    end = start + config.epochs
    ckpt = make_checkpoint(mode, models, flat, adam, end, rng, config, final_loss)
    log.info("%s: %d epochs, final loss %.6e", mode, config.epochs, final_loss)
    return TrainResult(history, models.unflatten(flat), ckpt, final_loss)
