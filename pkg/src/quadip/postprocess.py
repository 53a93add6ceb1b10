"""Stress recovery, error norms and convergence rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss
from scipy.spatial import cKDTree

from .assembly import DofMap
from .errors import MissingExact, SingularMass, ZeroError
from .fem import QuadratureRule, cell_rule, edge_reference_points, edge_rule, gradients_from_jacobian, jacobians, map_points, q1_basis
from .mesh import QuadMesh
from .model import BenchmarkProblem, MaterialParams, stress, strain_from_gradient


@dataclass
class DiscreteField:
    """Q1 displacement stored per cell: ``coeffs[c, a, i]`` is component i at local node a."""

    mesh: QuadMesh
    coeffs: np.ndarray

    @classmethod
    def from_solution(cls, mesh: QuadMesh, x: np.ndarray, dofmap: DofMap) -> "DiscreteField":
        return cls(mesh, np.asarray(x)[dofmap.cell_dofs].reshape(-1, 4, 2))

    @classmethod
    def interpolate(cls, mesh: QuadMesh, u: Callable) -> "DiscreteField":
        return cls(mesh, u(mesh.cell_coords()))

    def __add__(self, other):
        return DiscreteField(self.mesh, self.coeffs + other.coeffs)

    def __mul__(self, alpha: float):
        return DiscreteField(self.mesh, alpha * self.coeffs)

    __rmul__ = __mul__

    def evaluate(self, cells, ref):
        """Values (..., 2) and gradients (..., 2, 2) at reference points of given cells."""
        N, dN = q1_basis(ref)
        coords = self.mesh.vertices[self.mesh.cells[cells]]
        J = np.einsum("...ai,...aj->...ij", coords, dN)
        grads, _ = gradients_from_jacobian(dN[..., None, :, :], J[..., None, :, :])
        grads = grads[..., 0, :, :]
        c = self.coeffs[cells]
        u = np.einsum("...a,...ai->...i", N, c)
        g = np.einsum("...ai,...aj->...ij", c, grads)
        return u, g

    def nodal_average(self) -> np.ndarray:
        """Vertex values averaged over incident cells, for plotting."""
        V = self.mesh.n_vertices
        acc = np.zeros((V, 2))
        cnt = np.zeros(V)
        np.add.at(acc, self.mesh.cells.ravel(), self.coeffs.reshape(-1, 2))
        np.add.at(cnt, self.mesh.cells.ravel(), 1.0)
        return acc / cnt[:, None]


@dataclass
class NodalStressField:
    """Continuous Q1 stress, columns (sigma_xx, sigma_xy, sigma_yy) per vertex."""

    mesh: QuadMesh
    values: np.ndarray

    def tensor_at(self, cells, ref):
        N, _ = q1_basis(ref)
        vals = np.einsum("...a,...ak->...k", N, self.values[self.mesh.cells[cells]])
        return _to_tensor(vals)


def _to_tensor(v):
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 1]
    out[..., 1, 1] = v[..., 2]
    return out


# error norms integrate trig-type reference fields, so they use a richer rule
ERROR_QUADRATURE_ORDER = 4


def _gauss_rule(order: int) -> QuadratureRule:
    if order in (1, 2):
        return cell_rule(order)
    pts, wts = leggauss(order)
    xi, eta = np.meshgrid(pts, pts, indexing="ij")
    return QuadratureRule(np.column_stack([xi.ravel(), eta.ravel()]), np.outer(wts, wts).ravel())


def _quadrature(mesh: QuadMesh, order: int = 2):
    rule = _gauss_rule(order)
    N, dN = q1_basis(rule.points)
    coords = mesh.cell_coords()
    J = jacobians(coords, np.broadcast_to(dN, (mesh.n_cells,) + dN.shape))
    grads, det = gradients_from_jacobian(dN, J)
    x = map_points(coords, np.broadcast_to(N, (mesh.n_cells,) + N.shape))
    ref = np.broadcast_to(rule.points, (mesh.n_cells,) + rule.points.shape)
    return N, grads, det * rule.weights, x, ref


def field_at_quadrature(field: DiscreteField, order: int = 2):
    N, grads, wdet, x, ref = _quadrature(field.mesh, order)
    u = np.einsum("qa,cai->cqi", N, field.coeffs)
    g = np.einsum("cai,cqaj->cqij", field.coeffs, grads)
    return u, g, wdet, x, ref


# ------------------------------------------------------------ stress recovery


def l2_project(mesh: QuadMesh, values: np.ndarray, lumped: bool = False) -> np.ndarray:
    """Project values given at the 2x2 cell Gauss points onto continuous Q1.

    ``values`` has shape (C, 4, K); the result holds K nodal components.
    """
    N, _, wdet, _, _ = _quadrature(mesh)
    nv = mesh.n_vertices
    rhs = np.zeros((nv, values.shape[-1]))
    np.add.at(rhs, mesh.cells, np.einsum("cq,qa,cqk->cak", wdet, N, values))
    Me = np.einsum("cq,qa,qb->cab", wdet, N, N)
    if lumped:
        diag = np.zeros(nv)
        np.add.at(diag, mesh.cells, Me.sum(axis=2))
        if np.any(diag <= 0.0):
            raise SingularMass("lumped mass has a non-positive entry")
        return rhs / diag[:, None]
    rows = np.repeat(mesh.cells, 4, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 4)).ravel()
    M = sparse.coo_matrix((Me.ravel(), (rows, cols)), shape=(nv, nv)).tocsc()
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SingularMass(str(exc)) from exc
    return lu.solve(rhs)


def recover_stress(mesh: QuadMesh, material: MaterialParams, field: DiscreteField,
                   lumped: bool = False) -> NodalStressField:
    """L2-project the cellwise stress of ``field`` onto continuous Q1."""
    _, grads, _, _, _ = _quadrature(mesh)
    g = np.einsum("cai,cqaj->cqij", field.coeffs, grads)
    sig = stress(material, strain_from_gradient(g))
    comps = np.stack([sig[..., 0, 0], sig[..., 0, 1], sig[..., 1, 1]], axis=-1)
    return NodalStressField(mesh, l2_project(mesh, comps, lumped))


# ---------------------------------------------------------------- error norms


@dataclass
class ErrorReport:
    h: float
    ndofs: int
    disp_h1: float
    disp_l2: float
    stress_l2: float = float("nan")


def _exact_callables(exact):
    if isinstance(exact, BenchmarkProblem):
        if not exact.has_exact:
            raise MissingExact(f"problem {exact.name} has no exact solution")
        return exact.exact_solution, exact.exact_gradient
    if exact is None:
        raise MissingExact("no exact solution supplied")
    return exact.exact_solution, exact.exact_gradient


def displacement_error(mesh: QuadMesh, u_h: DiscreteField, exact,
                       order: int = ERROR_QUADRATURE_ORDER) -> tuple[float, float]:
    """Broken H1 seminorm and L2 norm of ``u - u_h`` over cell interiors.

    ``exact`` provides ``exact_solution(points)`` and ``exact_gradient(points)``;
    a surrogate reference may instead provide ``displacement_at(points)``.
    """
    u, g, wdet, x, ref = field_at_quadrature(u_h, order)
    if hasattr(exact, "displacement_at"):
        ue, ge = exact.displacement_at(x)
    else:
        fu, fg = _exact_callables(exact)
        ue, ge = fu(x), fg(x)
    h1 = np.sqrt(np.sum(wdet * np.sum((ge - g) ** 2, axis=(-2, -1))))
    l2 = np.sqrt(np.sum(wdet * np.sum((ue - u) ** 2, axis=-1)))
    return float(h1), float(l2)


def stress_error(mesh: QuadMesh, material: MaterialParams, field: NodalStressField, exact,
                 order: int = ERROR_QUADRATURE_ORDER) -> float:
    """L2 norm of the Frobenius difference between exact and recovered stress."""
    N, _, wdet, x, _ = _quadrature(mesh, order)
    sh = _to_tensor(np.einsum("qa,cak->cqk", N, field.values[mesh.cells]))
    if hasattr(exact, "stress_at"):
        se = exact.stress_at(x)
    elif isinstance(exact, BenchmarkProblem):
        if not exact.has_exact:
            raise MissingExact(f"problem {exact.name} has no exact solution")
        se = exact.exact_stress(x)
    elif callable(exact):
        se = exact(x)
    else:
        raise MissingExact("no exact stress supplied")
    return float(np.sqrt(np.sum(wdet * np.sum((se - sh) ** 2, axis=(-2, -1)))))


def jump_seminorm(field: DiscreteField) -> float:
    """sqrt(sum_E 1/h_E int_E |[u]|^2) over interior edges."""
    mesh = field.mesh
    edges = mesh.interior_edges
    if edges.size == 0:
        return 0.0
    rule = edge_rule(2)
    vals = []
    for slot in (0, 1):
        cells = mesh.edge_cells[edges, slot]
        local = mesh.edge_local[edges, slot]
        cv = mesh.cells[cells]
        rev = cv[np.arange(len(cells)), local] > cv[np.arange(len(cells)), (local + 1) % 4]
        ref = edge_reference_points(local[:, None], rule.points[None, :], rev[:, None])
        N, _ = q1_basis(ref)
        vals.append(np.einsum("eqa,eai->eqi", N, field.coeffs[cells]))
    d = np.sum((vals[0] - vals[1]) ** 2, axis=-1)
    w = 0.5 * rule.weights[None, :]  # h_E / 2 times 1 / h_E
    return float(np.sqrt(np.sum(w * d)))


def convergence_rates(records: Sequence, key: str = "disp_h1") -> list[float]:
    """Observed orders log(e_{i-1}/e_i) / log(h_{i-1}/h_i) between consecutive records.

    Records are ErrorReport-like objects or ``(h, error)`` pairs.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    pairs = [(r[0], r[1]) if isinstance(r, (tuple, list)) else (r.h, getattr(r, key)) for r in records]
    rates = []
    for (h0, e0), (h1, e1) in zip(pairs, pairs[1:]):
        if not h1 < h0:
            raise ValueError("mesh sizes must be strictly decreasing")
        if e0 <= 0.0 or e1 <= 0.0:
            raise ZeroError("cannot take the logarithm of a zero error")
        rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates


# ------------------------------------------------------ surrogate references


class PointLocator:
    """Find the cell and reference coordinates containing physical points."""

    def __init__(self, mesh: QuadMesh, candidates: int = 8):
        self.mesh = mesh
        self.coords = mesh.cell_coords()
        self.tree = cKDTree(self.coords.mean(axis=1))
        self.k = min(candidates, mesh.n_cells)

    def _inverse_map(self, cells, x):
        X = self.coords[cells]
        ref = np.zeros(x.shape)
        for _ in range(30):
            N, dN = q1_basis(ref)
            r = np.einsum("na,nai->ni", N, X) - x
            J = np.einsum("nai,naj->nij", X, dN)
            step = np.linalg.solve(J, r[..., None])[..., 0]
            ref -= step
            if np.max(np.abs(step), initial=0.0) < 1e-14:
                break
        return ref

    def locate(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        _, cand = self.tree.query(pts, k=self.k)
        cand = np.asarray(cand).reshape(len(pts), -1)
        cells = np.full(len(pts), -1, dtype=np.int64)
        ref = np.zeros((len(pts), 2))
        best = np.full(len(pts), np.inf)
        for j in range(cand.shape[1]):
            todo = np.flatnonzero(best > 1e-10)
            if todo.size == 0:
                break
            c = cand[todo, j]
            r = self._inverse_map(c, pts[todo])
            excess = np.max(np.abs(r), axis=1) - 1.0
            better = excess < best[todo]
            idx = todo[better]
            cells[idx], ref[idx], best[idx] = c[better], r[better], excess[better]
        if np.any(best > 1e-8):
            raise ValueError(f"{int(np.sum(best > 1e-8))} points lie outside the mesh")
        ref = np.clip(ref, -1.0, 1.0)
        shape = np.shape(points)[:-1]
        return cells.reshape(shape), ref.reshape(shape + (2,))


class SurrogateReference:
    """Fine-mesh solution used as the reference on coarser, unrelated meshes."""

    def __init__(self, field: DiscreteField, stress_field: NodalStressField):
        self.field = field
        self.stress_field = stress_field
        self.locator = PointLocator(field.mesh)

    def displacement_at(self, x):
        cells, ref = self.locator.locate(x)
        return self.field.evaluate(cells, ref)

    def stress_at(self, x):
        cells, ref = self.locator.locate(x)
        return self.stress_field.tensor_at(cells, ref)


# --------------------------------------------------------------- field export


def write_field(name: str, values) -> str:
    """Per-vertex rows after a ``field <name> <ncomponents>`` header."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    lines = [f"field {name} {v.shape[1]}"]
    lines += [" ".join(repr(float(a)) for a in row) for row in v.tolist()]
    return "\n".join(lines) + "\n"


def read_field(text: str) -> tuple[str, np.ndarray]:
    rows = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    rows = [r for r in rows if r]
    head = rows[0]
    if len(head) != 3 or head[0] != "field":
        raise ValueError("expected 'field <name> <ncomponents>' header")
    k = int(head[2])
    data = np.array([[float(t) for t in r] for r in rows[1:]]).reshape(-1, k)
    return head[1], data
