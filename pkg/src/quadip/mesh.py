"""Quadrilateral meshes: generation, distortion, edge topology and text I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from .errors import (
    DistortionRejected,
    EmptyDirichletSet,
    InvariantViolation,
    MeshNotClassified,
    NonManifold,
    ParseError,
)
from .fem import REF_VERTICES, jacobians, q1_basis

log = logging.getLogger(__name__)

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2
UNMARKED = -1

_MARKER_CHARS = {DIRICHLET: "D", NEUMANN: "N"}
_MAX_RETRIES = 100


@dataclass(frozen=True)
class Edge:
    endpoints: tuple[int, int]
    length: float
    kind: str
    incident_cells: tuple[tuple[int, int], ...]
    unit_normal: tuple[float, float]
    marker: str | None = None


@dataclass(frozen=True)
class DistortionSpec:
    factor: float
    seed: int = 0
    move_boundary: bool = False

    def __post_init__(self):
        if not 0.0 <= self.factor < 1.0:
            raise ValueError(f"distortion factor must lie in [0, 1), got {self.factor}")


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Vertices, CCW cells and (optionally) the edge topology.

    Edge data is stored column-wise.  ``edge_cells[:, 1]`` and
    ``edge_local[:, 1]`` are -1 on boundary edges.  ``markers`` holds
    INTERIOR, DIRICHLET, NEUMANN or UNMARKED per edge.
    """

    vertices: np.ndarray
    cells: np.ndarray
    edge_vertices: np.ndarray | None = None
    edge_cells: np.ndarray | None = None
    edge_local: np.ndarray | None = None
    edge_lengths: np.ndarray | None = None
    edge_normals: np.ndarray | None = None
    markers: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return 0 if self.edge_vertices is None else len(self.edge_vertices)

    @property
    def has_edges(self) -> bool:
        return self.edge_vertices is not None

    @property
    def is_classified(self) -> bool:
        return self.has_edges and not np.any(self.markers == UNMARKED)

    def _need_edges(self):
        if not self.has_edges:
            raise MeshNotClassified("edges have not been extracted")

    @property
    def interior_edges(self) -> np.ndarray:
        self._need_edges()
        return np.flatnonzero(self.markers == INTERIOR)

    @property
    def boundary_edges(self) -> np.ndarray:
        self._need_edges()
        return np.flatnonzero(self.markers != INTERIOR)

    @property
    def dirichlet_edges(self) -> np.ndarray:
        self._need_edges()
        return np.flatnonzero(self.markers == DIRICHLET)

    @property
    def neumann_edges(self) -> np.ndarray:
        self._need_edges()
        return np.flatnonzero(self.markers == NEUMANN)

    @property
    def boundary_markers(self) -> dict[int, str]:
        return {int(e): _MARKER_CHARS.get(int(self.markers[e])) for e in self.boundary_edges}

    def cell_coords(self, cells=None) -> np.ndarray:
        idx = self.cells if cells is None else self.cells[cells]
        return self.vertices[idx]

    def edge_midpoints(self) -> np.ndarray:
        self._need_edges()
        return 0.5 * (self.vertices[self.edge_vertices[:, 0]] + self.vertices[self.edge_vertices[:, 1]])

    def edge(self, i: int) -> Edge:
        self._need_edges()
        cells = [(int(c), int(k)) for c, k in zip(self.edge_cells[i], self.edge_local[i]) if c >= 0]
        m = int(self.markers[i])
        return Edge(
            endpoints=(int(self.edge_vertices[i, 0]), int(self.edge_vertices[i, 1])),
            length=float(self.edge_lengths[i]),
            kind="interior" if m == INTERIOR else "boundary",
            incident_cells=tuple(cells),
            unit_normal=(float(self.edge_normals[i, 0]), float(self.edge_normals[i, 1])),
            marker=_MARKER_CHARS.get(m),
        )

    def boundary_vertices(self) -> np.ndarray:
        self._need_edges()
        return np.unique(self.edge_vertices[self.boundary_edges])

    def same_as(self, other: "QuadMesh") -> bool:
        """Structural equality including every stored array."""
        names = ("vertices", "cells", "edge_vertices", "edge_cells", "edge_local",
                 "edge_lengths", "edge_normals", "markers")
        for name in names:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True


def _freeze(*arrays):
    for a in arrays:
        if a is not None:
            a.setflags(write=False)


def _make_mesh(vertices, cells, **edge_data) -> QuadMesh:
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 4)
    _freeze(vertices, cells, *edge_data.values())
    return QuadMesh(vertices, cells, **edge_data)


def from_arrays(vertices, cells) -> QuadMesh:
    """Validated mesh with edges extracted; boundary left unmarked."""
    V = np.asarray(vertices, dtype=float).reshape(-1, 2)
    C = np.asarray(cells, dtype=np.int64).reshape(-1, 4)
    check_cells(V, C)
    return extract_edges(_make_mesh(V, C))


def corner_determinants(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """det J of the bilinear map at the four reference vertices, shape (C, 4)."""
    _, dN = q1_basis(REF_VERTICES)
    J = jacobians(vertices[cells], dN)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def check_cells(vertices: np.ndarray, cells: np.ndarray) -> None:
    """Raise InvariantViolation unless every cell is CCW with positive Jacobian."""
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise InvariantViolation("cell references a vertex index out of range")
    for c in cells:
        if len(set(c.tolist())) != 4:
            raise InvariantViolation(f"cell {c.tolist()} repeats a vertex")
    det = corner_determinants(vertices, cells)
    bad = np.flatnonzero(np.any(det <= 0.0, axis=1))
    if bad.size:
        raise InvariantViolation(
            f"counter-clockwise orientation / positive Jacobian violated in cell {int(bad[0])}"
        )


def unit_square_mesh(levels: int) -> QuadMesh:
    """Uniform 2^levels x 2^levels grid on [0, 1]^2 with edges extracted."""
    if levels < 0:
        raise ValueError("levels must be non-negative")
    n = 2**levels
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v0 = j * (n + 1) + i
    cells = np.column_stack([v0, v0 + 1, v0 + n + 2, v0 + n + 1])
    return extract_edges(_make_mesh(vertices, cells))


def extract_edges(mesh: QuadMesh) -> QuadMesh:
    """Build edge topology, lengths and normals.  Existing markers are discarded."""
    cells = mesh.cells
    V = mesh.vertices
    C = len(cells)
    a = cells.reshape(-1)
    b = np.roll(cells, -1, axis=1).reshape(-1)
    sides = np.column_stack([np.minimum(a, b), np.maximum(a, b)])
    keys, inverse, counts = np.unique(sides, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        e = int(np.flatnonzero(counts > 2)[0])
        raise NonManifold(f"edge {tuple(keys[e].tolist())} is shared by {counts[e]} cells")

    E = len(keys)
    edge_cells = np.full((E, 2), -1, dtype=np.int64)
    edge_local = np.full((E, 2), -1, dtype=np.int64)
    side_cell = np.repeat(np.arange(C), 4)
    side_local = np.tile(np.arange(4), C)
    # stable sort keeps cell-major order, so slot 0 gets the lower cell index
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.empty(4 * C, dtype=np.int64)
    slot[order] = np.arange(4 * C) - np.repeat(starts, counts)
    edge_cells[inverse, slot] = side_cell
    edge_local[inverse, slot] = side_local

    interior = counts == 2
    if np.any(interior):
        # neighbours must traverse a shared side in opposite directions
        s0 = edge_cells[interior, 0] * 4 + edge_local[interior, 0]
        s1 = edge_cells[interior, 1] * 4 + edge_local[interior, 1]
        if np.any(a[s0] != b[s1]):
            raise InvariantViolation("neighbouring cells have inconsistent orientation")

    c0, k0 = edge_cells[:, 0], edge_local[:, 0]
    p = V[cells[c0, k0]]
    q = V[cells[c0, (k0 + 1) % 4]]
    t = q - p
    lengths = np.hypot(t[:, 0], t[:, 1])
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
    markers = np.where(interior, INTERIOR, UNMARKED).astype(np.int8)
    return _make_mesh(
        V, cells,
        edge_vertices=keys.astype(np.int64),
        edge_cells=edge_cells,
        edge_local=edge_local,
        edge_lengths=lengths,
        edge_normals=normals,
        markers=markers,
    )


def with_markers(mesh: QuadMesh, markers: np.ndarray) -> QuadMesh:
    markers = np.asarray(markers, dtype=np.int8).copy()
    _freeze(markers)
    return replace(mesh, markers=markers)


def classify_boundary(mesh: QuadMesh, rule: Callable[[np.ndarray], bool]) -> QuadMesh:
    """Mark boundary edges Dirichlet where ``rule(midpoint)`` is true, else Neumann."""
    mesh._need_edges()
    markers = mesh.markers.copy()
    mids = mesh.edge_midpoints()
    for e in np.flatnonzero(markers != INTERIOR):
        markers[e] = DIRICHLET if rule(mids[e]) else NEUMANN
    if not np.any(markers == DIRICHLET):
        raise EmptyDirichletSet("no boundary edge satisfies the Dirichlet rule")
    return with_markers(mesh, markers)


def all_dirichlet(point) -> bool:
    return True


def vertex_min_edge_length(mesh: QuadMesh) -> np.ndarray:
    mesh._need_edges()
    hmin = np.full(mesh.n_vertices, np.inf)
    for col in (0, 1):
        np.minimum.at(hmin, mesh.edge_vertices[:, col], mesh.edge_lengths)
    return hmin


def _boundary_tangents(mesh: QuadMesh) -> dict[int, np.ndarray]:
    """Unit tangent for boundary vertices lying on a straight boundary segment."""
    V = mesh.vertices
    incident: dict[int, list[np.ndarray]] = {}
    for e in mesh.boundary_edges:
        va, vb = mesh.edge_vertices[e]
        d = V[vb] - V[va]
        d = d / np.hypot(*d)
        incident.setdefault(int(va), []).append(d)
        incident.setdefault(int(vb), []).append(d)
    tangents = {}
    for v, ds in incident.items():
        if len(ds) == 2 and abs(ds[0][0] * ds[1][1] - ds[0][1] * ds[1][0]) < 1e-12:
            tangents[v] = ds[0]
    return tangents


def distort(mesh: QuadMesh, spec: DistortionSpec) -> QuadMesh:
    """Randomly perturb vertices by at most ``factor`` times the local edge length.

    Vertices are visited in index order.  Each draw is a uniform angle and a
    uniform radius; a draw that inverts any incident cell is redrawn, up to
    100 times.
    """
    if spec.factor == 0.0:
        return mesh
    mesh._need_edges()
    rng = np.random.default_rng(spec.seed)
    V = np.array(mesh.vertices, dtype=float)
    cells = mesh.cells
    hmin = vertex_min_edge_length(mesh)
    boundary = set(mesh.boundary_vertices().tolist())
    tangents = _boundary_tangents(mesh) if spec.move_boundary else {}

    vertex_cells: list[list[int]] = [[] for _ in range(len(V))]
    for c, cell in enumerate(cells):
        for v in cell:
            vertex_cells[v].append(c)

    for v in range(len(V)):
        if v in boundary and v not in tangents:
            continue
        rmax = spec.factor * hmin[v]
        local = cells[vertex_cells[v]]
        origin = V[v].copy()
        for _ in range(_MAX_RETRIES + 1):
            angle, r = rng.uniform(0.0, 2.0 * np.pi), rng.uniform(0.0, rmax)
            if v in tangents:
                step = r * np.cos(angle) * tangents[v]
            else:
                step = r * np.array([np.cos(angle), np.sin(angle)])
            V[v] = origin + step
            if np.all(corner_determinants(V, local) > 0.0):
                break
        else:
            raise DistortionRejected(f"vertex {v}: no valid position after {_MAX_RETRIES} retries")

    out = extract_edges(_make_mesh(V, cells))
    return with_markers(out, mesh.markers)


def mesh_size(mesh: QuadMesh) -> float:
    """Average element diagonal: mean over cells of the mean of both diagonals."""
    X = mesh.cell_coords()
    d1 = np.linalg.norm(X[:, 2] - X[:, 0], axis=1)
    d2 = np.linalg.norm(X[:, 3] - X[:, 1], axis=1)
    return float(np.mean(0.5 * (d1 + d2)))


# ---------------------------------------------------------------- text format


def write_mesh(mesh: QuadMesh) -> str:
    if not mesh.is_classified:
        raise MeshNotClassified("boundary edges must be classified before writing")
    out = ["quadmesh 1", f"vertices {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"cells {mesh.n_cells}")
    out += [" ".join(str(v) for v in c) for c in mesh.cells.tolist()]
    bnd = mesh.boundary_edges
    out.append(f"boundary {len(bnd)}")
    for e in bnd:
        va, vb = mesh.edge_vertices[e]
        out.append(f"{va} {vb} {_MARKER_CHARS[int(mesh.markers[e])]}")
    return "\n".join(out) + "\n"


def _content_lines(text: str) -> Iterable[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _section(lines, name: str) -> int:
    try:
        lineno, tok = next(lines)
    except StopIteration:
        raise ParseError(f"missing '{name}' section") from None
    if len(tok) != 2 or tok[0] != name:
        raise ParseError(f"expected '{name} <count>'", lineno)
    try:
        count = int(tok[1])
    except ValueError:
        raise ParseError(f"bad {name} count {tok[1]!r}", lineno) from None
    if count < 0:
        raise ParseError(f"negative {name} count", lineno)
    return count


def _rows(lines, count: int, width: int, conv, what: str):
    rows = []
    for _ in range(count):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise ParseError(f"unexpected end of file in {what}") from None
        if len(tok) != width:
            raise ParseError(f"{what} row needs {width} fields, got {len(tok)}", lineno)
        try:
            rows.append([conv(t) for t in tok])
        except ValueError:
            raise ParseError(f"malformed {what} row", lineno) from None
    return rows


def read_mesh(text: str) -> QuadMesh:
    lines = iter(_content_lines(text))
    try:
        lineno, tok = next(lines)
    except StopIteration:
        raise ParseError("empty mesh file") from None
    if tok != ["quadmesh", "1"]:
        raise ParseError("expected header 'quadmesh 1'", lineno)

    nv = _section(lines, "vertices")
    verts = _rows(lines, nv, 2, float, "vertex")
    nc = _section(lines, "cells")
    cells = _rows(lines, nc, 4, int, "cell")
    nb = _section(lines, "boundary")
    bnd = _rows(lines, nb, 3, str, "boundary")
    extra = next(lines, None)
    if extra is not None:
        raise ParseError("trailing content after boundary section", extra[0])

    V = np.array(verts, dtype=float).reshape(-1, 2)
    C = np.array(cells, dtype=np.int64).reshape(-1, 4)
    if nc == 0:
        raise InvariantViolation("mesh has no cells")
    check_cells(V, C)
    mesh = extract_edges(_make_mesh(V, C))

    lookup = {tuple(k): i for i, k in enumerate(mesh.edge_vertices.tolist())}
    markers = mesh.markers.copy()
    for va, vb, m in bnd:
        try:
            key = (min(int(va), int(vb)), max(int(va), int(vb)))
        except ValueError:
            raise ParseError(f"bad boundary vertex indices {va} {vb}") from None
        e = lookup.get(key)
        if e is None or markers[e] == INTERIOR:
            raise InvariantViolation(f"boundary entry {key} is not a boundary edge")
        if m not in ("D", "N"):
            raise ParseError(f"unknown boundary marker {m!r}")
        if markers[e] != UNMARKED:
            raise InvariantViolation(f"boundary edge {key} listed twice")
        markers[e] = DIRICHLET if m == "D" else NEUMANN
    if np.any(markers == UNMARKED):
        e = int(np.flatnonzero(markers == UNMARKED)[0])
        raise InvariantViolation(f"boundary edge {tuple(mesh.edge_vertices[e].tolist())} has no marker")
    if not np.any(markers == DIRICHLET):
        raise EmptyDirichletSet("mesh file has no Dirichlet edges")
    return with_markers(mesh, markers)
