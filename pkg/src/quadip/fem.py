"""Q1 reference element, isoparametric mapping and Gauss rules.

The reference cell is [-1, 1]^2 with local vertices numbered
counter-clockwise from (-1, -1).  Local edge ``k`` runs from local vertex
``k`` to local vertex ``k + 1 (mod 4)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import SingularJacobian, UnsupportedOrder

REF_VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


def edge_rule(ngp: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``ngp`` points on [-1, 1]."""
    if ngp not in (1, 2):
        raise UnsupportedOrder(f"edge rule with {ngp} points is not supported")
    pts, wts = leggauss(ngp)
    return QuadratureRule(pts, wts)


def cell_rule(order: int) -> QuadratureRule:
    """Tensor-product Gauss rule (``order`` x ``order``) on the reference square."""
    if order not in (1, 2):
        raise UnsupportedOrder(f"cell rule of order {order} is not supported")
    pts, wts = leggauss(order)
    xi, eta = np.meshgrid(pts, pts, indexing="ij")
    wx, wy = np.meshgrid(wts, wts, indexing="ij")
    return QuadratureRule(np.column_stack([xi.ravel(), eta.ravel()]), (wx * wy).ravel())


def q1_basis(ref_points):
    """Bilinear shape functions and their reference gradients.

    Args:
        ref_points: array of shape (..., 2).

    Returns:
        ``(N, dN)`` with shapes (..., 4) and (..., 4, 2).
    """
    p = np.asarray(ref_points, dtype=float)
    xi = p[..., 0, None]
    eta = p[..., 1, None]
    sx = REF_VERTICES[:, 0]
    sy = REF_VERTICES[:, 1]
    N = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta)
    dN = np.stack([0.25 * sx * (1.0 + sy * eta), 0.25 * sy * (1.0 + sx * xi)], axis=-1)
    return N, dN


def map_points(coords, N):
    """Physical points x = sum_a N_a x_a.  coords (..., 4, 2), N (..., Q, 4)."""
    return np.einsum("...qa,...ai->...qi", N, coords)


def jacobians(coords, dN):
    """J_ij = dx_i/dxi_j for each cell and point: coords (..., 4, 2), dN (..., Q, 4, 2)."""
    return np.einsum("...ai,...qaj->...qij", coords, dN)


def gradients_from_jacobian(dN, J):
    """Physical gradients grad N_a = J^{-T} grad_ref N_a.

    Returns ``(grads, detJ)`` with grads of shape (..., Q, 4, 2).
    """
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0.0):
        raise SingularJacobian("non-positive Jacobian determinant")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    # row vector times J^{-1}: dN/dx_i = sum_j dN/dxi_j (J^{-1})_{ji}
    grads = np.einsum("...qaj,...qji->...qai", dN, inv)
    return grads, det


@dataclass
class CellGeometry:
    """Physical vertex coordinates of one cell plus a per-instance map cache."""

    coords: np.ndarray
    vertex_ids: tuple[int, int, int, int] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(4, 2)

    def evaluate(self, ref_point):
        """Return (x, J, detJ, Jinv) at a single reference point."""
        key = (float(ref_point[0]), float(ref_point[1]))
        if key not in self._cache:
            N, dN = q1_basis(np.asarray(key))
            x = N @ self.coords
            J = self.coords.T @ dN
            det = float(np.linalg.det(J))
            inv = np.linalg.inv(J) if det != 0.0 else None
            self._cache[key] = (x, J, det, inv)
        return self._cache[key]

    def jacobian_det(self, ref_point) -> float:
        return self.evaluate(ref_point)[2]


def physical_gradients(geom: CellGeometry, ref_point) -> np.ndarray:
    """Gradients of the four shape functions at ``ref_point``, shape (4, 2)."""
    _, J, det, inv = geom.evaluate(ref_point)
    if det <= 0.0:
        raise SingularJacobian(f"det J = {det:g} at reference point {tuple(ref_point)}")
    _, dN = q1_basis(ref_point)
    return dN @ inv


def edge_reference_points(local_edge, s, reversed_):
    """Map edge parameters to cell reference coordinates.

    ``local_edge`` and ``reversed_`` broadcast against ``s``.  When
    ``reversed_`` is true the canonical edge direction runs from local
    vertex ``k + 1`` to ``k``.
    """
    k = np.asarray(local_edge)
    t = np.where(reversed_, -np.asarray(s, dtype=float), np.asarray(s, dtype=float))
    a = REF_VERTICES[k]
    b = REF_VERTICES[(k + 1) % 4]
    return 0.5 * (1.0 - t)[..., None] * a + 0.5 * (1.0 + t)[..., None] * b


def edge_trace(geom: CellGeometry, local_edge_index: int, s: float) -> np.ndarray:
    """Reference point on side ``local_edge_index`` for canonical edge parameter ``s``.

    The canonical direction goes from the smaller global vertex index to the
    larger, so neighbouring cells sample the same physical point.  Without
    ``geom.vertex_ids`` the local direction is used.
    """
    k = int(local_edge_index)
    rev = False
    if geom.vertex_ids is not None:
        rev = geom.vertex_ids[k] > geom.vertex_ids[(k + 1) % 4]
    return edge_reference_points(k, s, rev)
