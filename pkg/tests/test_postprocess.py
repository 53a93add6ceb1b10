import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadip.assembly import METHODS, assemble
from quadip.errors import MissingExact, ZeroError
from quadip.fem import CellGeometry, physical_gradients, q1_basis
from quadip.mesh import DistortionSpec, all_dirichlet, classify_boundary, from_arrays, mesh_size
from quadip.model import make_problem, material_with_shear, stress, strain_from_gradient
from quadip.postprocess import (
    DiscreteField,
    ErrorReport,
    NodalStressField,
    PointLocator,
    SurrogateReference,
    convergence_rates,
    displacement_error,
    field_at_quadrature,
    jump_seminorm,
    l2_project,
    read_field,
    recover_stress,
    stress_error,
    write_field,
)
from quadip.solver import solve


def plate_mesh(problem, levels, df=0.3, seed=1):
    return problem.build_mesh(levels, DistortionSpec(df, seed) if df else None)


def solved(problem, mesh, name):
    system = assemble(mesh, problem, METHODS[name])
    x = solve(system).solution
    return DiscreteField.from_solution(mesh, x, system.dofmap)


@pytest.fixture(scope="module")
def linear():
    p = make_problem("manufactured:linear", 0.4999)
    mesh = plate_mesh(p, 3)
    return p, mesh, DiscreteField.interpolate(mesh, p.exact_solution)


def test_linear_field_constant_stress(linear):
    p, mesh, u = linear
    sig = recover_stress(mesh, p.material, u)
    exact = p.exact_stress(np.zeros((1, 2)))[0]
    expect = np.array([exact[0, 0], exact[0, 1], exact[1, 1]])
    assert np.abs(sig.values - expect).max() < 1e-9 * np.abs(expect).max()
    assert stress_error(mesh, p.material, sig, p) < 1e-9 * np.abs(expect).max()


def test_zero_field_zero_stress(linear):
    p, mesh, u = linear
    sig = recover_stress(mesh, p.material, 0.0 * u)
    assert np.array_equal(sig.values, np.zeros_like(sig.values))


def test_projection_idempotent(linear):
    _, mesh, _ = linear
    rng = np.random.default_rng(0)
    nodal = rng.normal(size=(mesh.n_vertices, 3))
    N, _ = q1_basis(np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]]) / np.sqrt(3.0))
    at_q = np.einsum("qa,cak->cqk", N, nodal[mesh.cells])
    assert np.allclose(l2_project(mesh, at_q), nodal, atol=1e-12)
    lumped = l2_project(mesh, at_q, lumped=True)
    assert not np.allclose(lumped, nodal, atol=1e-6)


def test_lumped_reproduces_constants(linear):
    p, mesh, u = linear
    a = recover_stress(mesh, p.material, u, lumped=True).values
    b = recover_stress(mesh, p.material, u).values
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_interpolant_of_linear_has_zero_error(linear):
    p, mesh, u = linear
    h1, l2 = displacement_error(mesh, u, p)
    assert h1 < 1e-10 and l2 < 1e-10
    assert jump_seminorm(u) < 1e-14


def test_constant_shift():
    p = make_problem("manufactured:trig", 0.3)
    mesh = plate_mesh(p, 3)
    u = DiscreteField.interpolate(mesh, p.exact_solution)
    c = np.array([0.3, -0.4])
    shifted = DiscreteField(mesh, u.coeffs + c)
    h1a, _ = displacement_error(mesh, u, p)
    h1b, _ = displacement_error(mesh, shifted, p)
    assert h1b == pytest.approx(h1a, rel=1e-13)
    exact_shift = DiscreteField(mesh, p.exact_solution(mesh.cell_coords()) * 0 + c)

    class Zero:
        exact_solution = staticmethod(lambda x: np.zeros(x.shape))
        exact_gradient = staticmethod(lambda x: np.zeros(x.shape[:-1] + (2, 2)))

    h1, l2 = displacement_error(mesh, exact_shift, Zero())
    assert h1 < 1e-14
    assert l2 == pytest.approx(np.linalg.norm(c), rel=1e-13)


def test_missing_exact():
    p = make_problem("cantilever", 0.3)
    mesh = p.build_mesh(1)
    u = DiscreteField(mesh, np.zeros((mesh.n_cells, 4, 2)))
    with pytest.raises(MissingExact):
        displacement_error(mesh, u, p)
    with pytest.raises(MissingExact):
        stress_error(mesh, p.material, NodalStressField(mesh, np.zeros((mesh.n_vertices, 3))), p)
    with pytest.raises(MissingExact):
        displacement_error(mesh, u, None)


def test_stress_error_doubles_with_field():
    p = make_problem("manufactured:trig", 0.3)
    mesh = plate_mesh(p, 2)
    u = DiscreteField.interpolate(mesh, p.exact_solution)

    def zero(x):
        return np.zeros(x.shape[:-1] + (2, 2))

    e1 = stress_error(mesh, p.material, recover_stress(mesh, p.material, u), zero)
    e2 = stress_error(mesh, p.material, recover_stress(mesh, p.material, 2.0 * u), zero)
    assert e2 == pytest.approx(2 * e1, rel=1e-13)


def dense_cell_errors(mesh, p, u, sig, cell, n=10):
    """Tensor Gauss rule with n x n points on one cell, point by point."""
    pts, wts = np.polynomial.legendre.leggauss(n)
    geom = CellGeometry(mesh.vertices[mesh.cells[cell]])
    h1 = s2 = 0.0
    for xi, wx in zip(pts, wts):
        for eta, wy in zip(pts, wts):
            ref = (xi, eta)
            x, _, det, _ = geom.evaluate(ref)
            N, _ = q1_basis(np.array(ref))
            grads = physical_gradients(geom, ref)
            g = u.coeffs[cell].T @ grads
            ge = p.exact_gradient(x[None])[0]
            h1 += wx * wy * det * np.sum((ge - g) ** 2)
            sv = N @ sig.values[mesh.cells[cell]]
            sh = np.array([[sv[0], sv[1]], [sv[1], sv[2]]])
            se = p.exact_stress(x[None])[0]
            s2 += wx * wy * det * np.sum((se - sh) ** 2)
    return h1, s2


@pytest.mark.parametrize("cell", [0, 17, 200])
def test_dense_quadrature_oracle_single_cell(cell):
    p = make_problem("manufactured:trig", 0.3)
    mesh = plate_mesh(p, 4, seed=2)
    single = classify_boundary(from_arrays(mesh.vertices[mesh.cells[cell]], [[0, 1, 2, 3]]), all_dirichlet)
    u = DiscreteField.interpolate(single, p.exact_solution)
    sig = recover_stress(single, p.material, u)
    h1_ref, s2_ref = dense_cell_errors(single, p, u, sig, 0, n=10)
    assert displacement_error(single, u, p)[0] == pytest.approx(math.sqrt(h1_ref), rel=1e-6)
    assert stress_error(single, p.material, sig, p) == pytest.approx(math.sqrt(s2_ref), rel=1e-6)


def test_locking_ordering():
    p = make_problem("manufactured:trig", 0.49995)
    mesh = p.build_mesh(4)
    sg = displacement_error(mesh, solved(p, mesh, "SG_Q1"), p)[0]
    ip = displacement_error(mesh, solved(p, mesh, "NIPG"), p)[0]
    assert sg > 5 * ip


def test_new_ip_rates_on_distorted_meshes():
    p = make_problem("manufactured:trig", 0.49995)
    reports = []
    for lv in (3, 4, 5):
        mesh = plate_mesh(p, lv, df=0.3, seed=lv)
        u = solved(p, mesh, "NIPG")
        h1, l2 = displacement_error(mesh, u, p)
        s = stress_error(mesh, p.material, recover_stress(mesh, p.material, u), p)
        reports.append(ErrorReport(mesh_size(mesh), 8 * mesh.n_cells, h1, l2, s))
    rates = convergence_rates(reports)
    assert all(0.85 <= r <= 1.15 for r in rates[-1:])
    assert all(r > 0.8 for r in convergence_rates(reports, "stress_l2"))


def test_rate_examples():
    assert convergence_rates([(1.0, 1.0), (0.5, 0.5), (0.25, 0.25)]) == pytest.approx([1.0, 1.0])
    assert convergence_rates([(1.0, 1.0), (0.5, 0.25), (0.25, 1 / 16)]) == pytest.approx([2.0, 2.0])
    with pytest.raises(ZeroError):
        convergence_rates([(1.0, 1.0), (0.5, 0.0)])
    with pytest.raises(ValueError):
        convergence_rates([(1.0, 1.0)])
    with pytest.raises(ValueError):
        convergence_rates([(0.5, 1.0), (1.0, 0.5)])


@settings(max_examples=50)
@given(errs=st.lists(st.floats(1e-8, 1e3), min_size=2, max_size=6), scale=st.floats(1e-6, 1e6))
def test_rates_scale_invariant(errs, scale):
    hs = [2.0 ** -k for k in range(len(errs))]
    a = convergence_rates(list(zip(hs, errs)))
    b = convergence_rates(list(zip(hs, [e * scale for e in errs])))
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


_P = make_problem("manufactured:trig", 0.4999)
_MESH = plate_mesh(_P, 2, seed=9)
_U = solved(_P, _MESH, "SIPG")


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3))
def test_norm_homogeneity(alpha):
    class Zero:
        exact_solution = staticmethod(lambda x: np.zeros(x.shape))
        exact_gradient = staticmethod(lambda x: np.zeros(x.shape[:-1] + (2, 2)))

    h1, l2 = displacement_error(_MESH, _U, Zero())
    h1a, l2a = displacement_error(_MESH, alpha * _U, Zero())
    assert h1a == pytest.approx(abs(alpha) * h1, rel=1e-12)
    assert l2a == pytest.approx(abs(alpha) * l2, rel=1e-12)
    assert jump_seminorm(alpha * _U) == pytest.approx(abs(alpha) * jump_seminorm(_U), rel=1e-12)


def test_point_locator_roundtrip():
    p = make_problem("manufactured:sine", 0.3)
    mesh = plate_mesh(p, 4, seed=3)
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 1, (300, 2))
    cells, ref = PointLocator(mesh).locate(pts)
    N, _ = q1_basis(ref)
    back = np.einsum("na,nai->ni", N, mesh.cell_coords()[cells])
    assert np.abs(back - pts).max() < 1e-12
    assert np.all(np.abs(ref) <= 1.0)
    with pytest.raises(ValueError):
        PointLocator(mesh).locate(np.array([[1.5, 0.5]]))


def test_surrogate_on_same_mesh_gives_zero_error():
    u = _U
    sig = recover_stress(_MESH, _P.material, u)
    ref = SurrogateReference(u, sig)
    h1, l2 = displacement_error(_MESH, u, ref)
    assert h1 < 1e-9 and l2 < 1e-12
    assert stress_error(_MESH, _P.material, sig, ref) < 1e-9


def test_field_quadrature_shapes():
    u, g, wdet, x, ref = field_at_quadrature(_U)
    C = _MESH.n_cells
    assert u.shape == (C, 4, 2) and g.shape == (C, 4, 2, 2)
    assert wdet.sum() == pytest.approx(1.0, rel=1e-13)
    sig = stress(_P.material, strain_from_gradient(g))
    assert sig.shape == (C, 4, 2, 2)


def test_field_io_roundtrip():
    values = np.random.default_rng(1).normal(size=(9, 3))
    name, back = read_field(write_field("stress", values))
    assert name == "stress" and np.array_equal(back, values)
    with pytest.raises(ValueError):
        read_field("nonsense\n")


def test_nodal_average_of_continuous_field():
    p = make_problem("manufactured:linear", 0.3)
    mesh = plate_mesh(p, 2)
    u = DiscreteField.interpolate(mesh, p.exact_solution)
    assert np.allclose(u.nodal_average(), p.exact_solution(mesh.vertices), atol=1e-15)


def test_material_independent_of_units():
    m = material_with_shear(2.0, 0.3)
    assert m.mu == pytest.approx(2.0)
