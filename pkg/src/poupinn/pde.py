"""Steady diffusion problems on the unit square.

Strong form ``div(-K grad u) = f`` with Dirichlet data ``u = g_D`` and
Neumann data ``-K grad u . n = g_N``. Conductivity fields are constant,
piecewise constant (closed-form ``sign`` expressions) or learned. Forcing
terms of manufactured cases are always derived from the exact solution's jets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .numcore.jet import Jet2

EDGES = ("x=0", "x=1", "y=0", "y=1")
NORMALS = {
    "x=0": (-1.0, 0.0),
    "x=1": (1.0, 0.0),
    "y=0": (0.0, -1.0),
    "y=1": (0.0, 1.0),
}

TWO_PI = 2.0 * math.pi


def _points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return x.reshape(-1, 2), single


def _zero(X):
    return np.zeros(len(X))


def on_edge(X: np.ndarray, edge: str) -> np.ndarray:
    axis = 0 if edge.startswith("x") else 1
    target = 0.0 if edge.endswith("0") else 1.0
    return X[:, axis] == target


@dataclass
class BoundarySpec:
    """Dirichlet and Neumann data keyed by edge name (``x=0``, ``x=1``, ``y=0``, ``y=1``)."""

    dirichlet: dict = field(default_factory=dict)
    neumann: dict = field(default_factory=dict)

    def __post_init__(self):
        d, n = set(self.dirichlet), set(self.neumann)
        if d & n:
            raise ValueError(f"edges cannot be both Dirichlet and Neumann: {sorted(d & n)}")
        if d | n != set(EDGES):
            raise ValueError(f"boundary data must cover all edges, missing {sorted(set(EDGES) - d - n)}")

    def kind(self, edge: str) -> str:
        return "dirichlet" if edge in self.dirichlet else "neumann"

    @classmethod
    def homogeneous(cls, dirichlet_edges) -> "BoundarySpec":
        return cls(
            dirichlet={e: _zero for e in EDGES if e in dirichlet_edges},
            neumann={e: _zero for e in EDGES if e not in dirichlet_edges},
        )


# conductivity fields


class ConstantField:
    kind = "constant"

    def __init__(self, k: float):
        if k <= 0:
            raise ValueError("conductivity must be positive")
        self.k = float(k)
        self.levels = (self.k,)
        self.name = f"constant({self.k:g})"

    def value(self, x):
        X, single = _points(x)
        out = np.full(len(X), self.k)
        return out[0] if single else out

    def jet(self, x) -> Jet2:
        X, single = _points(x)
        z = np.zeros(len(X))
        j = Jet2(z + self.k, z, z, z, z, z)
        return j.map(lambda c: c[0]) if single else j

    def region(self, x):
        X, _ = _points(x)
        return np.zeros(len(X), dtype=int)

    def gap(self, x):
        X, _ = _points(x)
        return np.full(len(X), np.inf)


def _heaviside_pair(s):
    return (1.0 - s) / 2.0, (1.0 + s) / 2.0


class PiecewiseField:
    """Piecewise-constant field evaluated from a closed-form ``sign`` expression.

    ``levels[r]`` is the conductivity of region ``r``; ``gap`` is the
    level-set magnitude used to exclude a band around interfaces.
    """

    kind = "analytic"

    def __init__(self, name, evaluate, region, gap, levels, reconstruction=False):
        self.name = name
        self._evaluate = evaluate
        self._region = region
        self._gap = gap
        self.levels = tuple(float(k) for k in levels)
        self.reconstruction = reconstruction

    def value(self, x):
        X, single = _points(x)
        out = self._evaluate(X[:, 0], X[:, 1])
        return out[0] if single else out

    def region(self, x):
        X, _ = _points(x)
        return self._region(X[:, 0], X[:, 1])

    def gap(self, x):
        X, _ = _points(x)
        return self._gap(X[:, 0], X[:, 1])

    def on_interface(self, x) -> np.ndarray:
        return self.gap(x) == 0.0

    def jet(self, x) -> Jet2:
        """Value with zero derivatives; interface points have no classical derivative."""
        X, single = _points(x)
        if np.any(self.on_interface(X)):
            raise ValueError(f"{self.name}: jet requested on an interface point")
        v = self._evaluate(X[:, 0], X[:, 1])
        z = np.zeros(len(X))
        j = Jet2(v, z, z, z, z, z)
        return j.map(lambda c: c[0]) if single else j


def _two_region(name, levelset, k_neg, k_pos):
    def evaluate(x, y):
        lo, hi = _heaviside_pair(np.sign(levelset(x, y)))
        return k_neg * lo + k_pos * hi

    return PiecewiseField(
        name,
        evaluate,
        lambda x, y: (levelset(x, y) > 0).astype(int),
        lambda x, y: np.abs(levelset(x, y)),
        (k_neg, k_pos),
    )


def triangles() -> PiecewiseField:
    return _two_region("triangles", lambda x, y: x + y - 1.0, 1.0, 10.0)


def strips() -> PiecewiseField:
    return _two_region("strips", lambda x, y: x - 0.5, 1.0, 4.0)


def strips_inverted() -> PiecewiseField:
    return _two_region("strips_inverted", lambda x, y: x - 0.5, 4.0, 1.0)


def _quadrants(name, levels):
    # levels ordered (x<.5,y<.5), (x>.5,y<.5), (x<.5,y>.5), (x>.5,y>.5)
    def evaluate(x, y):
        xl, xh = _heaviside_pair(np.sign(x - 0.5))
        yl, yh = _heaviside_pair(np.sign(y - 0.5))
        return levels[0] * xl * yl + levels[1] * xh * yl + levels[2] * xl * yh + levels[3] * xh * yh

    return PiecewiseField(
        name,
        evaluate,
        lambda x, y: (x > 0.5).astype(int) + 2 * (y > 0.5).astype(int),
        lambda x, y: np.minimum(np.abs(x - 0.5), np.abs(y - 0.5)),
        levels,
        reconstruction=True,
    )


def boxes() -> PiecewiseField:
    return _quadrants("boxes", (1.0, 4.0, 7.0, 10.0))


def boxes_shuffled() -> PiecewiseField:
    return _quadrants("boxes_shuffled", (7.0, 1.0, 10.0, 4.0))


FIELDS = {
    "triangles": triangles,
    "strips": strips,
    "strips_inverted": strips_inverted,
    "boxes": boxes,
    "boxes_shuffled": boxes_shuffled,
}


def k_field_eval(expr: str, x):
    """Evaluate a named closed-form conductivity (``sign(0) = 0`` on interfaces)."""
    try:
        return FIELDS[expr]().value(x)
    except KeyError:
        raise ValueError(f"unknown conductivity expression {expr!r}") from None


# residuals


def residual_interior(u: Jet2, k: Jet2, f):
    """``-K lap(u) - grad(K) . grad(u) - f``."""
    return -k.v * (u.hxx + u.hyy) - (k.gx * u.gx + k.gy * u.gy) - f


def residual_dirichlet(u_value, g_d):
    return u_value - g_d


def residual_neumann(u: Jet2, k_value, normal, g_n):
    nx, ny = normal
    return -k_value * (u.gx * nx + u.gy * ny) - g_n


def flux_jump(u: Jet2, k_left: float, k_right: float, normal) -> float:
    """Mismatch of normal fluxes across an interface for a shared gradient."""
    dn = u.gx * normal[0] + u.gy * normal[1]
    return np.abs(k_left * dn - k_right * dn)


def forcing_oracle(u_true: Callable, fld) -> Callable:
    """Forcing that makes ``u_true`` an exact solution for conductivity ``fld``."""

    def forcing(x):
        X, single = _points(x)
        u = u_true(X)
        k = fld.jet(X)
        f = -k.v * (u.hxx + u.hyy) - (k.gx * u.gx + k.gy * u.gy)
        return f[0] if single else f

    return forcing


def fd_forcing(u_value: Callable, fld, x, h: float = 1e-3):
    """Forcing from fourth-order central differences of ``u`` and ``K``."""
    X, single = _points(x)
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])

    def d1(fn, e):
        return (-fn(X + 2 * e) + 8 * fn(X + e) - 8 * fn(X - e) + fn(X - 2 * e)) / (12 * h)

    def d2(fn, e):
        return (-fn(X + 2 * e) + 16 * fn(X + e) - 30 * fn(X) + 16 * fn(X - e) - fn(X - 2 * e)) / (12 * h * h)

    lap = d2(u_value, ex) + d2(u_value, ey)
    flux = d1(fld.value, ex) * d1(u_value, ex) + d1(fld.value, ey) * d1(u_value, ey)
    f = -fld.value(X) * lap - flux
    return f[0] if single else f


# manufactured solutions


def sin_product(X) -> Jet2:
    """``sin(2 pi x) sin(2 pi y)``."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
    sx, cx = np.sin(TWO_PI * X[:, 0]), np.cos(TWO_PI * X[:, 0])
    sy, cy = np.sin(TWO_PI * X[:, 1]), np.cos(TWO_PI * X[:, 1])
    w2 = TWO_PI * TWO_PI
    u = sx * sy
    return Jet2(u, TWO_PI * cx * sy, TWO_PI * sx * cy, -w2 * u, w2 * cx * cy, -w2 * u)


def sin_x(m: int) -> Callable:
    """``sin(m pi x)``, independent of ``y``."""
    w = m * math.pi

    def u(X) -> Jet2:
        X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
        s = np.sin(w * X[:, 0])
        z = np.zeros(len(X))
        return Jet2(s, w * np.cos(w * X[:, 0]), z, -w * w * s, z, z)

    return u


@dataclass
class ManufacturedCase:
    """A diffusion problem; ``u_true`` is absent for conductivity-only cases."""

    name: str
    field: object
    u_true: Optional[Callable] = None
    boundary: Optional[BoundarySpec] = None
    params: dict = field(default_factory=dict)
    note: str = ""

    @property
    def forcing(self) -> Callable:
        if self.u_true is None:
            raise ValueError(f"{self.name} has no exact solution to derive a forcing from")
        return forcing_oracle(self.u_true, self.field)

    def u_value(self, x):
        X, single = _points(x)
        v = self.u_true(X).v
        return v[0] if single else v

    def dirichlet_edges(self):
        return tuple(e for e in EDGES if e in self.boundary.dirichlet)


def _dirichlet_x_neumann_y():
    return BoundarySpec.homogeneous({"x=0", "x=1"})


def _pinn_ex1():
    return ManufacturedCase(
        "pinn-ex1",
        ConstantField(1.0),
        sin_product,
        BoundarySpec.homogeneous(set(EDGES)),
        note="u = sin(2 pi x) sin(2 pi y), K = 1, homogeneous Dirichlet on all edges",
    )


def _pinn_ex2(m=2):
    return ManufacturedCase(
        "pinn-ex2",
        ConstantField(1.0),
        sin_x(m),
        _dirichlet_x_neumann_y(),
        params={"m": m},
        note="u = sin(m pi x), K = 1, Dirichlet on x=0,1 and zero flux on y=0,1",
    )


def _conductivity_case(name, factory):
    def build():
        fld = factory()
        note = f"conductivity field {fld.name}"
        if fld.reconstruction:
            note += " (quadrant reconstruction; no closed form published)"
        return ManufacturedCase(name, fld, note=note)

    return build


def _poupinn(name, factory):
    def build():
        return ManufacturedCase(
            name,
            factory(),
            sin_x(2),
            _dirichlet_x_neumann_y(),
            params={"m": 2},
            note=f"u = sin(2 pi x) with piecewise K ({factory.__name__}); forcing derived from the true K",
        )

    return build


CASES = {
    "pinn-ex1": _pinn_ex1,
    "pinn-ex2": _pinn_ex2,
    "pou-ex1": _conductivity_case("pou-ex1", triangles),
    "pou-ex2": _conductivity_case("pou-ex2", triangles),
    "pou-ex3": _conductivity_case("pou-ex3", boxes_shuffled),
    "pou-ex4": _conductivity_case("pou-ex4", boxes),
    "pou-ex5": _conductivity_case("pou-ex5", strips),
    "pou-ex6": _conductivity_case("pou-ex6", strips_inverted),
    "poupinn-ex1": _poupinn("poupinn-ex1", strips),
    "poupinn-ex2": _poupinn("poupinn-ex2", strips_inverted),
}


def get_case(name: str) -> ManufacturedCase:
    try:
        return CASES[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; known: {', '.join(CASES)}") from None


# Forcing terms as printed alongside the two constant-conductivity cases.
REFERENCE_FORCING = {
    "pinn-ex1": lambda X: -8.0 * math.pi**2 * np.sin(TWO_PI * X[:, 0]) * np.sin(TWO_PI * X[:, 1]),
    "pinn-ex2": lambda X: 4.0 * math.pi**2 * np.sin(TWO_PI * X[:, 0]),
}


def forcing_discrepancy(name: str, n: int = 17) -> dict:
    """Compare the derived forcing with the reference formula on an interior grid."""
    case = get_case(name)
    t = np.arange(1, n + 1) / (n + 1)
    X = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    derived = case.forcing(X)
    printed = REFERENCE_FORCING[name](X)
    same = float(np.max(np.abs(derived - printed)))
    flipped = float(np.max(np.abs(derived + printed)))
    return {
        "case": name,
        "max_abs_difference": same,
        "consistent": same <= 1e-9,
        "sign_flipped": same > 1e-9 and flipped <= 1e-9,
    }
