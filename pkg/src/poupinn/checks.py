"""Numerical self-checks: derivative oracles, partition unity, manufactured residuals.

Each check returns a :class:`CheckResult` with the worst observed value and
the tolerance it is held to. ``run_all`` is what ``poupinn check`` prints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from . import pde, train
from .numcore import autodiff as ad
from .pou import PartitionModel, conductivity, phi

# Tolerances of the self-check suite.
JET_GRAD_TOL = 1e-6
JET_HESS_TOL = 1e-4
LOSS_GRAD_TOL = 1e-6
UNITY_TOL = 1e-12
RESIDUAL_TOL = 1e-10
FORCING_FD_TOL = 1e-7

FD_GRAD_STEP = 1e-6
FD_HESS_STEP = 1e-5
FD_FORCING_STEP = 1e-3


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)
    lower_bound: bool = False

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.lower_bound:
            return f"{status}  {self.name}: min {self.value:.3e} (must exceed {self.tolerance:g})"
        return f"{status}  {self.name}: max {self.value:.3e} (tol {self.tolerance:.0e})"


def _result(name, value, tol, **details) -> CheckResult:
    return CheckResult(name, float(value), tol, bool(value <= tol), details)


def _rel(exact, approx) -> float:
    exact, approx = np.asarray(exact), np.asarray(approx)
    return float(np.max(np.abs(exact - approx))) / max(float(np.max(np.abs(exact))), 1e-12)


def random_network(rng: np.random.Generator):
    """A small random MLP with non-zero biases, for derivative checks."""
    depth = int(rng.integers(1, 4))
    hidden = tuple(int(w) for w in rng.integers(3, 13, size=depth))
    head = "softmax" if rng.random() < 0.5 else "linear"
    out = int(rng.integers(2, 5)) if head == "softmax" else int(rng.integers(1, 3))
    spec = nw.mlp(2, hidden, out, head)
    params = nw.init_glorot(spec, rng)
    layers = [(w, rng.normal(0.0, 0.5, size=b.shape)) for w, b in params.layers]
    return spec, nw.NetworkParams(layers)


def jet_fd(n: int = 100, seed: int = 0) -> list[CheckResult]:
    """Jet gradients and Hessians against central differences on random networks."""
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    ex, ey = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    for _ in range(n):
        spec, params = random_network(rng)
        x = rng.random(2)
        j = nw.forward_jet(params, spec, x[None, :])
        grad = np.stack([j.gx[0], j.gy[0]])
        hess = np.stack([[j.hxx[0], j.hxy[0]], [j.hxy[0], j.hyy[0]]])

        def value(p):
            return nw.forward(params, spec, p[None, :])[0]

        def gradient(p):
            jp = nw.forward_jet(params, spec, p[None, :])
            return np.stack([jp.gx[0], jp.gy[0]])

        h = FD_GRAD_STEP
        fd_g = np.stack([(value(x + h * e) - value(x - h * e)) / (2 * h) for e in (ex, ey)])
        h = FD_HESS_STEP
        fd_h = np.stack([(gradient(x + h * e) - gradient(x - h * e)) / (2 * h) for e in (ex, ey)], axis=1)
        worst_g = max(worst_g, _rel(grad, fd_g))
        worst_h = max(worst_h, _rel(hess, fd_h))
    return [
        _result("jet gradient vs FD", worst_g, JET_GRAD_TOL, networks=n),
        _result("jet Hessian vs FD", worst_h, JET_HESS_TOL, networks=n),
    ]


def _small_joint_problem(seed: int):
    case = pde.get_case("poupinn-ex1")
    coll = train.sample_collocation(train.CollocationSpec("random", 24, 8), seed)
    rng = np.random.default_rng(seed)
    u_spec = nw.mlp(2, (6, 6), 1, "linear")
    pou_spec = nw.mlp(2, (6,), 2, "softmax")
    models = train.Models(
        u_spec,
        nw.init_glorot(u_spec, rng),
        PartitionModel.create(pou_spec, rng, logc=rng.normal(0.0, 0.3, size=2)),
    )
    return train.PinnProblem(case, coll, joint=True), models


def loss_fd(seed: int = 0) -> list[CheckResult]:
    """Parameter gradients of each training objective against central differences."""
    rng = np.random.default_rng(seed)
    cases = []

    problem, models = _small_joint_problem(seed)
    cfg = train.TrainConfig(l2_lambda=1e-3, bc_mode="soft")
    cases.append(("joint soft", problem, models, cfg))

    case = pde.get_case("pinn-ex1")
    coll = train.sample_collocation(train.CollocationSpec("random", 24, 8), seed + 1)
    u_spec = nw.mlp(2, (6, 6), 1, "linear")
    u_models = train.Models(u_spec, nw.init_glorot(u_spec, rng), None)
    cases.append(("forward hard-dirichlet", train.PinnProblem(case, coll, joint=False), u_models,
                  train.TrainConfig(l2_lambda=1e-3, bc_mode="hard-dirichlet")))

    X = rng.random((32, 2))
    sup = train.SupervisedProblem(X, pde.strips().value(X))
    pou_spec = nw.mlp(2, (6,), 3, "softmax")
    cases.append(("supervised", sup, train.Models(pou=PartitionModel.create(pou_spec, rng)),
                  train.TrainConfig(l2_lambda=1e-3)))

    worst = 0.0
    per_case = {}
    for name, prob, m, c in cases:
        fn = prob.objective(m, c)
        err = ad.fd_check(lambda p: fn(p)[0], m.flatten(), FD_GRAD_STEP)
        per_case[name] = err
        worst = max(worst, err)
    return [_result("loss parameter gradient vs FD", worst, LOSS_GRAD_TOL, **per_case)]


def unity(n_points: int = 10_000, seed: int = 0) -> list[CheckResult]:
    """Partition functions sum to one and the conductivity stays positive."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    k_min = np.inf
    for n_part in (2, 3, 4, 5):
        spec = nw.mlp(2, (40,), n_part, "softmax")
        model = PartitionModel.create(spec, rng, logc=rng.normal(0.0, 2.0, size=n_part))
        X = rng.random((n_points, 2))
        worst = max(worst, float(np.max(np.abs(np.sum(phi(model, X), axis=1) - 1.0))))
        k_min = min(k_min, float(np.min(conductivity(model, X))))
    return [
        _result("partition unity deviation", worst, UNITY_TOL),
        CheckResult("conductivity positivity", k_min, 0.0, bool(k_min > 0), lower_bound=True),
    ]


def _off_interface(fld, X, margin=0.0):
    if not hasattr(fld, "gap"):
        return X
    return X[fld.gap(X) > margin]


def manufactured(names=None, n: int = 33) -> list[CheckResult]:
    """Interior residual of each exact solution and forcing oracle against FD."""
    from .experiments import grid_points

    names = names or [k for k in pde.CASES if pde.get_case(k).u_true is not None]
    worst_r = worst_f = 0.0
    per_case = {}
    for name in names:
        case = pde.get_case(name)
        X = _off_interface(case.field, grid_points(n, n))
        r = pde.residual_interior(case.u_true(X), case.field.jet(X), case.forcing(X))
        res = float(np.max(np.abs(r)))
        # FD stencils reach 2h; keep them on one side of every interface.
        Xf = _off_interface(case.field, grid_points(n, n), 2.5 * FD_FORCING_STEP)
        fd = pde.fd_forcing(case.u_value, case.field, Xf, FD_FORCING_STEP)
        ferr = _rel(case.forcing(Xf), fd)
        per_case[name] = {"residual": res, "forcing_fd": ferr}
        worst_r, worst_f = max(worst_r, res), max(worst_f, ferr)
    return [
        _result("manufactured interior residual", worst_r, RESIDUAL_TOL, **per_case),
        _result("forcing oracle vs FD", worst_f, FORCING_FD_TOL),
    ]


def forcing_notices() -> list[str]:
    """Human-readable notes where the derived forcing disagrees with the printed one."""
    notes = []
    for name in pde.REFERENCE_FORCING:
        d = pde.forcing_discrepancy(name)
        if d["sign_flipped"]:
            notes.append(
                f"NOTICE  {name}: derived forcing is the negative of the printed formula "
                f"(max |derived - printed| = {d['max_abs_difference']:.3e}); the derived one is used"
            )
        elif not d["consistent"]:
            notes.append(f"NOTICE  {name}: printed forcing disagrees with the derived one")
    return notes


def run_all() -> list[CheckResult]:
    return jet_fd() + loss_fd() + unity() + manufactured()
