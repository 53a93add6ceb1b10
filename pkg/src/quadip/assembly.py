"""Global linear systems for SG Q1, SG Q1 + SRI and the interior penalty family.

Local dof ``2 * a + i`` of a cell is component ``i`` at local node ``a``.
IP cells own 8 independent dofs; SG dofs live on vertices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigMismatch, MeshNotClassified
from .fem import cell_rule, edge_reference_points, edge_rule, gradients_from_jacobian, jacobians, map_points, q1_basis
from .mesh import UNMARKED, QuadMesh
from .model import BenchmarkProblem, MaterialParams

SG_Q1 = "SG_Q1"
SG_Q1_SRI = "SG_Q1_SRI"
IP = "IP"

_IP_NAMES = {1: "NIPG", -1: "SIPG", 0: "IIPG"}


@dataclass(frozen=True)
class MethodConfig:
    family: str
    theta: int = 0
    k_mu: float = 0.0
    k_lambda: float = 0.0
    edge_ngp: int = 1

    def __post_init__(self):
        if self.family not in (SG_Q1, SG_Q1_SRI, IP):
            raise ConfigMismatch(f"unknown method family {self.family!r}")
        if self.family == IP:
            if self.theta not in (-1, 0, 1):
                raise ConfigMismatch(f"theta must be -1, 0 or 1, got {self.theta}")
            if self.edge_ngp not in (1, 2):
                raise ConfigMismatch(f"edge_ngp must be 1 or 2, got {self.edge_ngp}")
            if self.k_mu < 0 or self.k_lambda < 0:
                raise ConfigMismatch("penalty parameters must be non-negative")

    @classmethod
    def ip(cls, theta: int, edge_ngp: int = 1, k_mu: float | None = None,
           k_lambda: float | None = None) -> "MethodConfig":
        """IP method with the default penalties unless overridden."""
        if k_mu is None:
            k_mu = 10.0
        if k_lambda is None:
            k_lambda = 0.0 if theta == 1 else 10.0
        return cls(IP, theta, float(k_mu), float(k_lambda), edge_ngp)

    @property
    def is_ip(self) -> bool:
        return self.family == IP

    @property
    def method_id(self) -> str:
        if not self.is_ip:
            return self.family
        name = _IP_NAMES[self.theta]
        return name if self.edge_ngp == 1 else f"{name}_FULL"


METHODS = {
    "SG_Q1": MethodConfig(SG_Q1),
    "SG_Q1_SRI": MethodConfig(SG_Q1_SRI),
    "NIPG": MethodConfig.ip(1),
    "SIPG": MethodConfig.ip(-1),
    "IIPG": MethodConfig.ip(0),
    "NIPG_FULL": MethodConfig.ip(1, edge_ngp=2),
    "SIPG_FULL": MethodConfig.ip(-1, edge_ngp=2),
    "IIPG_FULL": MethodConfig.ip(0, edge_ngp=2),
}


def method_config(name: str, k_mu: float | None = None, k_lambda: float | None = None) -> MethodConfig:
    try:
        base = METHODS[name.upper()]
    except KeyError:
        raise ConfigMismatch(f"unknown method {name!r}; known: {', '.join(METHODS)}") from None
    if not base.is_ip or (k_mu is None and k_lambda is None):
        return base
    return MethodConfig.ip(base.theta, base.edge_ngp,
                           base.k_mu if k_mu is None else k_mu,
                           base.k_lambda if k_lambda is None else k_lambda)


@dataclass(frozen=True)
class DofMap:
    cell_dofs: np.ndarray  # (C, 8)
    n_dofs: int
    conforming: bool


@dataclass
class LinearSystem:
    A: sparse.csr_matrix
    b: np.ndarray
    dofmap: DofMap
    dirichlet_dofs: Optional[np.ndarray] = None

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs


def ip_dofmap(mesh: QuadMesh) -> DofMap:
    C = mesh.n_cells
    return DofMap(np.arange(8 * C, dtype=np.int64).reshape(C, 8), 8 * C, False)


def sg_dofmap(mesh: QuadMesh) -> DofMap:
    nodes = mesh.cells
    dofs = np.empty((mesh.n_cells, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return DofMap(dofs, 2 * mesh.n_vertices, True)


def dofmap_for(mesh: QuadMesh, config: MethodConfig) -> DofMap:
    return ip_dofmap(mesh) if config.is_ip else sg_dofmap(mesh)


def dof_count(mesh: QuadMesh, config: MethodConfig) -> int:
    return 8 * mesh.n_cells if config.is_ip else 2 * mesh.n_vertices


# ------------------------------------------------------------ local kernels


def dof_values(N, grads):
    """Per-dof vector values (..., 8, 2) and gradients (..., 8, 2, 2)."""
    shape = N.shape[:-1]
    V = np.zeros(shape + (8, 2))
    G = np.zeros(shape + (8, 2, 2))
    for i in range(2):
        V[..., i::2, i] = N
        G[..., i::2, i, :] = grads
    return V, G


def _sym(G):
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _cell_data(mesh: QuadMesh, order: int):
    rule = cell_rule(order)
    N, dN = q1_basis(rule.points)
    coords = mesh.cell_coords()
    J = jacobians(coords, np.broadcast_to(dN, (mesh.n_cells,) + dN.shape))
    grads, det = gradients_from_jacobian(dN, J)
    return rule, N, grads, det * rule.weights


def cell_matrices(mesh: QuadMesh, material: MaterialParams, lambda_order: int = 2) -> np.ndarray:
    """Element stiffness blocks K[c, test, trial] of int sigma(u):eps(v)."""
    _, _, grads, wdet = _cell_data(mesh, 2)
    _, G = dof_values(np.zeros(grads.shape[:-1]), grads)
    E = _sym(G)
    K = 2.0 * material.mu * np.einsum("cq,cqaij,cqbij->cab", wdet, E, E)
    if lambda_order == 2:
        div = np.trace(G, axis1=-2, axis2=-1)
    else:
        _, _, grads1, wdet = _cell_data(mesh, lambda_order)
        _, G1 = dof_values(np.zeros(grads1.shape[:-1]), grads1)
        div = np.trace(G1, axis1=-2, axis2=-1)
    K += material.lam * np.einsum("cq,cqa,cqb->cab", wdet, div, div)
    return K


def cell_loads(mesh: QuadMesh, problem: BenchmarkProblem) -> np.ndarray:
    rule, N, grads, wdet = _cell_data(mesh, 2)
    x = map_points(mesh.cell_coords(), np.broadcast_to(N, (mesh.n_cells,) + N.shape))
    f = problem.body_force(x)
    V, _ = dof_values(np.broadcast_to(N, grads.shape[:-1]), grads)
    return np.einsum("cq,cqi,cqai->ca", wdet, f, V)


@dataclass
class _Side:
    """Traces of the 8 local basis functions of one cell side on many edges."""

    V: np.ndarray  # (M, Q, 8, 2)
    G: np.ndarray  # (M, Q, 8, 2, 2)
    n: np.ndarray  # (M, 2) outward normal of this cell


def _side(mesh: QuadMesh, edges, slot: int, s: np.ndarray) -> _Side:
    cells = mesh.edge_cells[edges, slot]
    local = mesh.edge_local[edges, slot]
    cell_v = mesh.cells[cells]
    rev = np.take_along_axis(cell_v, local[:, None], 1)[:, 0] > \
        np.take_along_axis(cell_v, ((local + 1) % 4)[:, None], 1)[:, 0]
    ref = edge_reference_points(local[:, None], s[None, :], rev[:, None])
    N, dN = q1_basis(ref)
    J = jacobians(mesh.vertices[cell_v], dN)
    grads, _ = gradients_from_jacobian(dN, J)
    V, G = dof_values(N, grads)
    sign = 1.0 if slot == 0 else -1.0
    return _Side(V, G, sign * mesh.edge_normals[edges])


def _edge_points(mesh: QuadMesh, edges, s: np.ndarray) -> np.ndarray:
    a = mesh.vertices[mesh.edge_vertices[edges, 0]]
    b = mesh.vertices[mesh.edge_vertices[edges, 1]]
    t = s[None, :, None]
    return 0.5 * (1.0 - t) * a[:, None, :] + 0.5 * (1.0 + t) * b[:, None, :]


def _edge_weights(mesh: QuadMesh, edges, weights: np.ndarray) -> np.ndarray:
    return 0.5 * mesh.edge_lengths[edges, None] * weights[None, :]


def _jump_terms(mesh: QuadMesh, edges, s: np.ndarray, interior: bool):
    """Tensor jump, scalar jump, average strain and average divergence per dof."""
    slots = (0, 1) if interior else (0,)
    alpha = 0.5 if interior else 1.0
    parts = [_side(mesh, edges, k, s) for k in slots]
    V = np.concatenate([p.V for p in parts], axis=2)
    G = np.concatenate([p.G for p in parts], axis=2)
    n = np.concatenate([np.broadcast_to(p.n[:, None, None, :], p.V.shape) for p in parts], axis=2)
    jump_t = V[..., :, None] * n[..., None, :]
    jump_s = np.einsum("...i,...i->...", V, n)
    avg_eps = alpha * _sym(G)
    avg_div = alpha * np.trace(G, axis1=-2, axis2=-1)
    return jump_t, jump_s, avg_eps, avg_div, V, n


def edge_matrices(mesh: QuadMesh, material: MaterialParams, config: MethodConfig,
                  edges: np.ndarray, interior: bool) -> np.ndarray:
    """Edge blocks K[e, test, trial] of all consistency and penalty terms."""
    mu, lam, theta = material.mu, material.lam, config.theta
    h = mesh.edge_lengths[edges][:, None]

    full = edge_rule(2)
    jt, _, ae, _, _, _ = _jump_terms(mesh, edges, full.points, interior)
    w = _edge_weights(mesh, edges, full.weights)
    JA = np.einsum("eq,eqaij,eqbij->eab", w, ae, jt)  # [test a, trial b] = A_a : J_b
    JJ = np.einsum("eq,eqaij,eqbij->eab", w / h, jt, jt)
    K = theta * 2.0 * mu * JA - 2.0 * mu * np.swapaxes(JA, 1, 2) + config.k_mu * mu * JJ

    rule = edge_rule(config.edge_ngp)
    _, js, _, ad, _, _ = _jump_terms(mesh, edges, rule.points, interior)
    w = _edge_weights(mesh, edges, rule.weights)
    DJ = np.einsum("eq,eqa,eqb->eab", w, ad, js)  # [test a, trial b] = d_a j_b
    SS = np.einsum("eq,eqa,eqb->eab", w / h, js, js)
    K += theta * lam * DJ - lam * np.swapaxes(DJ, 1, 2) + config.k_lambda * lam * SS
    return K


def dirichlet_loads(mesh: QuadMesh, problem: BenchmarkProblem, config: MethodConfig,
                    edges: np.ndarray) -> np.ndarray:
    """Weak Dirichlet data terms for the test functions of each edge's cell."""
    material = problem.material
    mu, lam, theta = material.mu, material.lam, config.theta
    h = mesh.edge_lengths[edges][:, None]

    full = edge_rule(2)
    _, _, ae, _, V, n = _jump_terms(mesh, edges, full.points, interior=False)
    w = _edge_weights(mesh, edges, full.weights)
    g = problem.dirichlet_data(_edge_points(mesh, edges, full.points))
    nrm = mesh.edge_normals[edges][:, None, :]
    gn_t = g[..., :, None] * nrm[..., None, :]
    r = theta * 2.0 * mu * np.einsum("eq,eqij,eqaij->ea", w, gn_t, ae)
    r += config.k_mu * mu * np.einsum("eq,eqi,eqai->ea", w / h, g, V)

    rule = edge_rule(config.edge_ngp)
    _, js, _, ad, _, _ = _jump_terms(mesh, edges, rule.points, interior=False)
    w = _edge_weights(mesh, edges, rule.weights)
    g = problem.dirichlet_data(_edge_points(mesh, edges, rule.points))
    gn = np.einsum("eqi,ei->eq", g, mesh.edge_normals[edges])
    r += theta * lam * np.einsum("eq,eq,eqa->ea", w, gn, ad)
    r += config.k_lambda * lam * np.einsum("eq,eq,eqa->ea", w / h, gn, js)
    return r


def neumann_loads(mesh: QuadMesh, problem: BenchmarkProblem, edges: np.ndarray) -> np.ndarray:
    rule = edge_rule(2)
    side = _side(mesh, edges, 0, rule.points)
    w = _edge_weights(mesh, edges, rule.weights)
    x = _edge_points(mesh, edges, rule.points)
    normals = np.broadcast_to(mesh.edge_normals[edges][:, None, :], x.shape)
    t = problem.traction_data(x, normals)
    return np.einsum("eq,eqi,eqai->ea", w, t, side.V)


# ---------------------------------------------------------------- scatter


def _scatter_matrix(blocks, dofs, n: int, rng=None) -> sparse.csr_matrix:
    data = np.concatenate([b.ravel() for b in blocks])
    rows = np.concatenate([np.repeat(d, d.shape[1], axis=1).ravel() for d in dofs])
    cols = np.concatenate([np.tile(d, (1, d.shape[1])).ravel() for d in dofs])
    if rng is not None:
        perm = rng.permutation(len(data))
        data, rows, cols = data[perm], rows[perm], cols[perm]
    return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _scatter_vector(blocks, dofs, n: int) -> np.ndarray:
    b = np.zeros(n)
    for blk, d in zip(blocks, dofs):
        np.add.at(b, d.ravel(), blk.ravel())
    return b


def _require(mesh: QuadMesh):
    if not mesh.has_edges or np.any(mesh.markers == UNMARKED):
        raise MeshNotClassified("mesh boundary must be classified before assembly")


def assemble_ip(mesh: QuadMesh, material: MaterialParams, problem: BenchmarkProblem,
                config: MethodConfig, *, include_edges: bool = True,
                shuffle: np.random.Generator | None = None) -> LinearSystem:
    """Assemble the interior penalty system.

    ``shuffle`` permutes the order in which local blocks are accumulated;
    the result must not depend on it beyond round-off.
    """
    if not config.is_ip:
        raise ConfigMismatch(f"assemble_ip called with family {config.family}")
    _require(mesh)
    dm = ip_dofmap(mesh)
    cell_dofs = dm.cell_dofs

    blocks = [cell_matrices(mesh, material)]
    dofs = [cell_dofs]
    rhs = [cell_loads(mesh, problem)]
    rhs_dofs = [cell_dofs]

    inner, dirichlet, neumann = mesh.interior_edges, mesh.dirichlet_edges, mesh.neumann_edges
    if include_edges:
        if inner.size:
            blocks.append(edge_matrices(mesh, material, config, inner, interior=True))
            dofs.append(np.concatenate([cell_dofs[mesh.edge_cells[inner, 0]],
                                        cell_dofs[mesh.edge_cells[inner, 1]]], axis=1))
        if dirichlet.size:
            blocks.append(edge_matrices(mesh, material, config, dirichlet, interior=False))
            dofs.append(cell_dofs[mesh.edge_cells[dirichlet, 0]])
            rhs.append(dirichlet_loads(mesh, problem, config, dirichlet))
            rhs_dofs.append(cell_dofs[mesh.edge_cells[dirichlet, 0]])
    if neumann.size:
        rhs.append(neumann_loads(mesh, problem, neumann))
        rhs_dofs.append(cell_dofs[mesh.edge_cells[neumann, 0]])

    A = _scatter_matrix(blocks, dofs, dm.n_dofs, shuffle)
    return LinearSystem(A, _scatter_vector(rhs, rhs_dofs, dm.n_dofs), dm)


def sg_stiffness(mesh: QuadMesh, material: MaterialParams, sri: bool = False) -> sparse.csr_matrix:
    """Conforming stiffness matrix before boundary conditions."""
    dm = sg_dofmap(mesh)
    K = cell_matrices(mesh, material, lambda_order=1 if sri else 2)
    return _scatter_matrix([K], [dm.cell_dofs], dm.n_dofs)


def assemble_sg(mesh: QuadMesh, material: MaterialParams, problem: BenchmarkProblem,
                sri: bool = False) -> LinearSystem:
    """Standard Galerkin Q1 system with strongly imposed Dirichlet data."""
    _require(mesh)
    dm = sg_dofmap(mesh)
    A = sg_stiffness(mesh, material, sri)
    rhs = [cell_loads(mesh, problem)]
    rhs_dofs = [dm.cell_dofs]
    neumann = mesh.neumann_edges
    if neumann.size:
        rhs.append(neumann_loads(mesh, problem, neumann))
        rhs_dofs.append(dm.cell_dofs[mesh.edge_cells[neumann, 0]])
    b = _scatter_vector(rhs, rhs_dofs, dm.n_dofs)

    nodes = np.unique(mesh.edge_vertices[mesh.dirichlet_edges])
    g = problem.dirichlet_data(mesh.vertices[nodes])
    fixed = np.concatenate([2 * nodes, 2 * nodes + 1])
    values = np.concatenate([g[:, 0], g[:, 1]])
    order = np.argsort(fixed)
    fixed, values = fixed[order], values[order]

    xg = np.zeros(dm.n_dofs)
    xg[fixed] = values
    b -= A @ xg
    keep = np.ones(dm.n_dofs)
    keep[fixed] = 0.0
    Dk = sparse.diags(keep)
    A = (Dk @ A @ Dk + sparse.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    b[fixed] = values
    return LinearSystem(A, b, dm, dirichlet_dofs=fixed)


def assemble(mesh: QuadMesh, problem: BenchmarkProblem, config: MethodConfig) -> LinearSystem:
    if config.is_ip:
        return assemble_ip(mesh, problem.material, problem, config)
    return assemble_sg(mesh, problem.material, problem, sri=config.family == SG_Q1_SRI)


def export_triplets(A) -> str:
    """Debug dump, one ``row col value`` line per stored entry."""
    coo = sparse.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    return "".join(f"{r} {c} {v!r}\n" for r, c, v in
                   zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].tolist()))
