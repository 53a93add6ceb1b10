import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadip.errors import (
    DistortionRejected,
    EmptyDirichletSet,
    InvariantViolation,
    MeshNotClassified,
    NonManifold,
    ParseError,
)
from quadip.fem import cell_rule, jacobians, q1_basis
from quadip.mesh import (
    DIRICHLET,
    NEUMANN,
    DistortionSpec,
    all_dirichlet,
    classify_boundary,
    distort,
    extract_edges,
    from_arrays,
    mesh_size,
    read_mesh,
    unit_square_mesh,
    vertex_min_edge_length,
    write_mesh,
)


def classified(levels, rule=all_dirichlet):
    return classify_boundary(unit_square_mesh(levels), rule)


def left_face(p):
    return abs(p[0]) < 1e-12


@pytest.mark.parametrize("levels, cells, verts", [(0, 1, 4), (3, 64, 81), (5, 1024, 1089)])
def test_unit_square_counts(levels, cells, verts):
    m = unit_square_mesh(levels)
    assert m.n_cells == cells
    assert m.n_vertices == verts


def test_edge_counts_two_by_two():
    m = unit_square_mesh(1)
    assert len(m.interior_edges) == 4
    assert len(m.boundary_edges) == 8


def test_single_cell_edges():
    m = unit_square_mesh(0)
    assert len(m.interior_edges) == 0
    assert len(m.boundary_edges) == 4


@pytest.mark.parametrize("levels", range(0, 6))
def test_handshake_identity(levels):
    m = unit_square_mesh(levels)
    assert 4 * m.n_cells == 2 * len(m.interior_edges) + len(m.boundary_edges)


def test_edge_geometry():
    m = distort(classified(3), DistortionSpec(0.3, seed=5))
    V = m.vertices
    for e in range(m.n_edges):
        edge = m.edge(e)
        a, b = edge.endpoints
        assert a < b
        assert edge.length == pytest.approx(np.linalg.norm(V[b] - V[a]), rel=1e-14)
        n = np.array(edge.unit_normal)
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-14)
        # outward from the first incident cell: points away from its centroid
        c, _ = edge.incident_cells[0]
        centroid = V[m.cells[c]].mean(axis=0)
        mid = 0.5 * (V[a] + V[b])
        assert np.dot(mid - centroid, n) > 0
        if edge.kind == "interior":
            assert edge.incident_cells[0][0] < edge.incident_cells[1][0]


def test_classification_rules():
    m = classified(3)
    assert np.all(m.markers[m.boundary_edges] == DIRICHLET)
    m = classified(4, left_face)
    assert len(m.dirichlet_edges) == 16
    assert len(m.dirichlet_edges) + len(m.neumann_edges) == len(m.boundary_edges)
    assert set(m.boundary_markers.values()) == {"D", "N"}
    with pytest.raises(EmptyDirichletSet):
        classify_boundary(unit_square_mesh(2), lambda p: False)


def test_distortion_zero_factor_is_identity():
    m = classified(3)
    assert distort(m, DistortionSpec(0.0, seed=1)).same_as(m)


def test_distortion_deterministic_and_bounded():
    m = classified(4)
    spec = DistortionSpec(0.3, seed=42)
    a, b = distort(m, spec), distort(m, spec)
    assert a.same_as(b)
    assert np.array_equal(a.vertices.view(np.uint64), b.vertices.view(np.uint64))
    moved = np.linalg.norm(a.vertices - m.vertices, axis=1)
    assert np.all(moved <= 0.3 * vertex_min_edge_length(m) + 1e-15)
    assert np.all(moved[m.boundary_vertices()] == 0.0)
    assert np.array_equal(a.markers, m.markers)


def test_distortion_seed_changes_mesh():
    m = classified(3)
    a = distort(m, DistortionSpec(0.3, seed=1))
    b = distort(m, DistortionSpec(0.3, seed=2))
    assert not np.array_equal(a.vertices, b.vertices)


def test_move_boundary_keeps_square():
    m = classified(3)
    d = distort(m, DistortionSpec(0.3, seed=3, move_boundary=True))
    V = d.vertices
    assert V.min() == 0.0 and V.max() == 1.0
    on_edge = np.isclose(m.vertices, 0.0) | np.isclose(m.vertices, 1.0)
    assert np.array_equal(V[on_edge], m.vertices[on_edge])
    assert not np.array_equal(V, m.vertices)


def test_distortion_spec_validates():
    with pytest.raises(ValueError):
        DistortionSpec(1.0)
    with pytest.raises(ValueError):
        DistortionSpec(-0.1)


def test_distortion_rejected_after_retries(monkeypatch):
    import quadip.mesh as mesh_mod

    calls = []

    def always_inverted(vertices, cells):
        calls.append(1)
        return -np.ones((len(cells), 4))

    monkeypatch.setattr(mesh_mod, "corner_determinants", always_inverted)
    with pytest.raises(DistortionRejected):
        distort(classified(1), DistortionSpec(0.3, seed=0))
    assert len(calls) == mesh_mod._MAX_RETRIES + 1


def test_mesh_size_values():
    assert mesh_size(unit_square_mesh(0)) == pytest.approx(np.sqrt(2), rel=1e-15)
    assert mesh_size(unit_square_mesh(3)) == pytest.approx(np.sqrt(2) / 8, rel=1e-15)
    for n in range(5):
        assert mesh_size(unit_square_mesh(n + 1)) == pytest.approx(mesh_size(unit_square_mesh(n)) / 2, rel=1e-15)


def test_mesh_size_matches_loop_on_distorted_mesh():
    m = distort(classified(3), DistortionSpec(0.3, seed=9))
    total = 0.0
    for c in m.cells:
        p = [m.vertices[i] for i in c]
        d1 = np.hypot(*(p[2] - p[0]))
        d2 = np.hypot(*(p[3] - p[1]))
        total += (d1 + d2) / 2
    assert mesh_size(m) == pytest.approx(total / m.n_cells, rel=1e-14)


def test_roundtrip_full_precision():
    m = distort(classified(2, left_face), DistortionSpec(0.3, seed=1))
    back = read_mesh(write_mesh(m))
    assert np.array_equal(back.vertices, m.vertices)
    assert back.same_as(m)


def test_write_requires_classification():
    with pytest.raises(MeshNotClassified):
        write_mesh(unit_square_mesh(1))


SQUARE = """quadmesh 1
vertices 4
0 0
1 0
1 1
0 1
cells 1
{cell}
boundary 4
0 1 D
1 2 D
2 3 N
0 3 N
"""


def test_read_clockwise_cell():
    with pytest.raises(InvariantViolation):
        read_mesh(SQUARE.format(cell="0 3 2 1"))
    assert read_mesh(SQUARE.format(cell="0 1 2 3")).n_cells == 1


def test_read_three_cells_on_one_side():
    text = """quadmesh 1
vertices 8
0 0
1 0
1 1
0 1
1 -1
0 -1
0.2 1.5
0.8 1.5
cells 3
0 1 2 3
5 4 1 0
5 4 1 0
boundary 0
"""
    with pytest.raises(NonManifold):
        read_mesh(text)


@pytest.mark.parametrize("text, line", [
    ("quadmesh 2\n", 1),
    ("quadmesh 1\nvertices 1\n0 0 0\n", 3),
    ("quadmesh 1\nvertices x\n", 2),
    ("", None),
])
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as info:
        read_mesh(text)
    assert info.value.line == line


def test_read_requires_dirichlet():
    text = SQUARE.format(cell="0 1 2 3").replace(" D", " N")
    with pytest.raises(EmptyDirichletSet):
        read_mesh(text)


def test_read_missing_marker():
    text = SQUARE.format(cell="0 1 2 3").replace("boundary 4", "boundary 3").replace("0 3 N\n", "")
    with pytest.raises(InvariantViolation):
        read_mesh(text)


def test_arrays_are_read_only():
    m = unit_square_mesh(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0


@settings(max_examples=25, deadline=None)
@given(levels=st.integers(1, 4), factor=st.floats(0.0, 0.45), seed=st.integers(0, 2**32 - 1))
def test_distortion_preserves_invariants(levels, factor, seed):
    m = classified(levels)
    d = distort(m, DistortionSpec(factor, seed=seed))
    rule = cell_rule(2)
    _, dN = q1_basis(rule.points)
    J = jacobians(d.cell_coords(), dN)
    assert np.all(np.linalg.det(J) > 0)
    assert 4 * d.n_cells == 2 * len(d.interior_edges) + len(d.boundary_edges)
    e = extract_edges(d)
    assert np.array_equal(e.edge_cells, d.edge_cells)
