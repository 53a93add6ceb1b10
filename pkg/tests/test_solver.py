import numpy as np
import pytest
import scipy.sparse as sparse

from quadip.assembly import METHODS, assemble
from quadip.errors import SingularMatrix, ToleranceNotReached
from quadip.model import make_problem
from quadip.mesh import DistortionSpec
from quadip.solver import relative_residual, solve


def test_identity():
    b = np.array([3.0, -1.5, 2.25])
    report = solve((sparse.identity(3, format="csr"), b))
    assert np.array_equal(report.solution, b)
    assert report.relative_residual == 0.0


def test_two_by_two():
    report = solve((sparse.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])))
    assert np.allclose(report.solution, [1.0, 1.0], atol=1e-15)


def test_singular_matrix():
    with pytest.raises(SingularMatrix):
        solve((sparse.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 2.0])))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve((sparse.identity(3, format="csr"), np.ones(2)))
    with pytest.raises(ValueError):
        solve((sparse.identity(2, format="csr"), np.ones(2)), method="cholesky")


def test_iterative_path_and_failure():
    n = 50
    A = sparse.diags([-1.0, 2.5, -1.0], [-1, 0, 1], shape=(n, n), format="csr")
    b = np.ones(n)
    report = solve((A, b), method="iterative")
    assert report.relative_residual <= 1e-10
    assert report.stats["iterations"] > 0
    with pytest.raises(ToleranceNotReached):
        solve((A, b), method="iterative", maxiter=1, tolerance=1e-30)


@pytest.mark.parametrize("name", ["SIPG", "NIPG", "IIPG", "SG_Q1"])
def test_ip_systems_meet_tolerance(name):
    p = make_problem("manufactured:trig", 0.49995)
    mesh = p.build_mesh(2)
    report = solve(assemble(mesh, p, METHODS[name]))
    assert report.relative_residual < 1e-10


def test_extended_refinement_near_incompressible_limit():
    # level 5 NIPG at nu = 0.49995 sits just above the double-precision floor
    p = make_problem("manufactured:trig", 0.49995)
    mesh = p.build_mesh(5, DistortionSpec(0.3, 3))
    system = assemble(mesh, p, METHODS["SIPG"])
    report = solve(system)
    assert report.relative_residual < 1e-10
    assert relative_residual(system.A, report.solution, system.b) < 1e-9


def test_sipg_factorises_on_test_meshes():
    for df in (0.0, 0.1, 0.3):
        p = make_problem("square_plate", 0.49995)
        mesh = p.build_mesh(3, DistortionSpec(df, 1) if df else None)
        solve(assemble(mesh, p, METHODS["SIPG"]))


def test_repeat_solve_is_bit_identical():
    p = make_problem("manufactured:trig", 0.49)
    mesh = p.build_mesh(3, DistortionSpec(0.3, 2))
    system = assemble(mesh, p, METHODS["NIPG"])
    a = solve(system).solution
    b = solve(system).solution
    assert np.array_equal(a, b)
