import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poupinn import pde
from poupinn.numcore.jet import Jet2

PI = math.pi


def const_jet(c):
    return Jet2(c, 0.0, 0.0, 0.0, 0.0, 0.0)


def interior_grid(n):
    t = np.arange(1, n + 1) / (n + 1)
    return np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)


# boundary data


def test_boundary_spec_must_partition_edges():
    with pytest.raises(ValueError):
        pde.BoundarySpec(dirichlet={e: None for e in pde.EDGES}, neumann={"x=0": None})
    with pytest.raises(ValueError):
        pde.BoundarySpec(dirichlet={"x=0": None})
    b = pde.BoundarySpec.homogeneous({"x=0", "x=1"})
    assert [b.kind(e) for e in pde.EDGES] == ["dirichlet", "dirichlet", "neumann", "neumann"]


def test_constant_field_rejects_nonpositive():
    with pytest.raises(ValueError):
        pde.ConstantField(0.0)


# closed-form fields


def test_triangles_values():
    assert pde.k_field_eval("triangles", np.array([0.2, 0.2])) == 1.0
    assert pde.k_field_eval("triangles", np.array([0.8, 0.8])) == 10.0
    assert pde.k_field_eval("triangles", np.array([0.5, 0.5])) == 5.5


def test_strip_values():
    assert pde.k_field_eval("strips", np.array([0.75, 0.5])) == 4.0
    assert pde.k_field_eval("strips_inverted", np.array([0.75, 0.5])) == 1.0
    assert pde.k_field_eval("strips", np.array([0.25, 0.5])) == 1.0


def test_box_fields_are_quadrants():
    q = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    assert list(pde.k_field_eval("boxes", q)) == [1.0, 4.0, 7.0, 10.0]
    assert list(pde.k_field_eval("boxes_shuffled", q)) == [7.0, 1.0, 10.0, 4.0]
    assert pde.boxes().reconstruction


def test_unknown_field_expression():
    with pytest.raises(ValueError):
        pde.k_field_eval("hexagons", np.array([0.1, 0.1]))


@settings(max_examples=50)
@given(st.sampled_from(sorted(pde.FIELDS)), st.floats(0, 1), st.floats(0, 1))
def test_fields_are_positive_and_regions_valid(name, x, y):
    fld = pde.FIELDS[name]()
    X = np.array([[x, y]])
    assert fld.value(X)[0] > 0
    r = fld.region(X)[0]
    assert 0 <= r < len(fld.levels)
    if not fld.on_interface(X)[0]:
        assert fld.value(X)[0] == fld.levels[r]


def test_jet_refuses_interface_points():
    with pytest.raises(ValueError):
        pde.strips().jet(np.array([0.5, 0.3]))


# residuals


def test_constant_u_has_zero_residual():
    u = const_jet(3.0)
    k = Jet2(2.0, 0.7, -0.1, 0.3, 0.0, 1.0)
    assert pde.residual_interior(u, k, 0.0) == 0.0


def test_example_two_residual_at_point():
    x = 0.3
    w = 2 * PI
    u = Jet2(math.sin(w * x), w * math.cos(w * x), 0.0, -w * w * math.sin(w * x), 0.0, 0.0)
    f = 4 * PI**2 * math.sin(w * x)
    assert abs(pde.residual_interior(u, const_jet(1.0), f)) <= 1e-12


def test_example_one_residual_on_grid():
    case = pde.get_case("pinn-ex1")
    X = interior_grid(17)
    r = pde.residual_interior(case.u_true(X), case.field.jet(X), case.forcing(X))
    assert np.max(np.abs(r)) <= 1e-10


def test_dirichlet_residual():
    assert pde.residual_dirichlet(0.0, 0.0) == 0.0
    assert pde.residual_dirichlet(0.5, 0.0) == 0.5
    assert pde.residual_dirichlet(1.7, 1.7) == 0.0


def test_neumann_residual():
    u_y_free = Jet2(0.3, 1.2, 0.0, 0.0, 0.0, 0.0)
    assert pde.residual_neumann(u_y_free, 1.0, pde.NORMALS["y=0"], 0.0) == 0.0
    u_eq_x = Jet2(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    assert pde.residual_neumann(u_eq_x, 1.0, pde.NORMALS["x=1"], 0.0) == -1.0


def test_example_two_neumann_edges_vanish():
    case = pde.get_case("pinn-ex2")
    t = np.linspace(0, 1, 11)
    for edge in ("y=0", "y=1"):
        X = np.stack([t, np.full_like(t, float(edge[-1]))], axis=1)
        r = pde.residual_neumann(case.u_true(X), 1.0, pde.NORMALS[edge], 0.0)
        assert np.all(r == 0.0)


def test_flux_jump():
    u = Jet2(0.0, -2 * PI, 0.0, 0.0, 0.0, 0.0)
    assert pde.flux_jump(u, 1.0, 4.0, (1.0, 0.0)) == pytest.approx(6 * PI)
    assert pde.flux_jump(u, 1.0, 4.0, (1.0, 0.0)) == pytest.approx(18.850, abs=1e-3)
    assert pde.flux_jump(u, 3.0, 3.0, (1.0, 0.0)) == 0.0
    assert pde.flux_jump(u, 1.0, 4.0, (0.0, 1.0)) == 0.0


# forcing


def test_constant_u_has_zero_forcing():
    f = pde.forcing_oracle(lambda X: Jet2(*(np.zeros(len(X)) + c for c in (2.0, 0, 0, 0, 0, 0))), pde.strips())
    assert np.all(f(np.array([[0.2, 0.3], [0.8, 0.1]])) == 0.0)


def test_example_two_forcing_matches_reference():
    X = interior_grid(9)
    f = pde.get_case("pinn-ex2").forcing(X)
    assert np.allclose(f, 4 * PI**2 * np.sin(2 * PI * X[:, 0]), rtol=1e-13, atol=1e-12)
    assert pde.forcing_discrepancy("pinn-ex2")["consistent"]


def test_example_one_forcing_sign():
    X = interior_grid(9)
    f = pde.get_case("pinn-ex1").forcing(X)
    expected = 8 * PI**2 * np.sin(2 * PI * X[:, 0]) * np.sin(2 * PI * X[:, 1])
    assert np.allclose(f, expected, rtol=1e-13, atol=1e-12)
    d = pde.forcing_discrepancy("pinn-ex1")
    assert d["sign_flipped"] and not d["consistent"]


@pytest.mark.parametrize("name", ["pinn-ex1", "pinn-ex2", "poupinn-ex1", "poupinn-ex2"])
def test_oracle_forcing_agrees_with_fd(name):
    case = pde.get_case(name)
    X = interior_grid(15)
    if hasattr(case.field, "gap"):
        X = X[case.field.gap(X) > 0.01]
    exact = case.forcing(X)
    fd = pde.fd_forcing(case.u_value, case.field, X)
    assert np.max(np.abs(exact - fd)) / np.max(np.abs(exact)) <= 1e-7


def test_piecewise_forcing_uses_local_conductivity():
    case = pde.get_case("poupinn-ex1")
    left, right = np.array([0.25, 0.5]), np.array([0.75, 0.5])
    assert case.forcing(left) == pytest.approx(4 * PI**2 * math.sin(2 * PI * 0.25))
    assert case.forcing(right) == pytest.approx(4 * 4 * PI**2 * math.sin(2 * PI * 0.75))


# registry


def test_case_registry():
    assert set(pde.CASES) == {
        "pinn-ex1", "pinn-ex2", "pou-ex1", "pou-ex2", "pou-ex3", "pou-ex4", "pou-ex5", "pou-ex6",
        "poupinn-ex1", "poupinn-ex2",
    }
    with pytest.raises(KeyError):
        pde.get_case("nosuch")
    assert pde.get_case("pou-ex6").field.levels == (4.0, 1.0)
    assert pde.get_case("pou-ex1").u_true is None
    with pytest.raises(ValueError):
        pde.get_case("pou-ex1").forcing
    assert pde.get_case("pinn-ex2").dirichlet_edges() == ("x=0", "x=1")
