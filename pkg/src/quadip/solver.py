"""Sparse linear solves with a verified residual."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import SingularMatrix, ToleranceNotReached

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10


@dataclass
class SolveReport:
    solution: np.ndarray
    relative_residual: float
    method: str
    wall_time: float
    stats: dict = field(default_factory=dict)


def relative_residual(A, x, b) -> float:
    nb = float(np.linalg.norm(b))
    r = float(np.linalg.norm(b - A @ x))
    return r if nb == 0.0 else r / nb


def _direct(A, b, stats):
    try:
        lu = spla.splu(sparse.csc_matrix(A), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("factorization produced non-finite values")
    stats["fill_nnz"] = int(lu.L.nnz + lu.U.nnz)
    return x, lu


def _iterative(A, b, tolerance, maxiter, stats):
    d = A.diagonal()
    if np.any(d == 0.0):
        raise SingularMatrix("zero on the diagonal; Jacobi preconditioner undefined")
    M = sparse.diags(1.0 / d)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(A, b, M=M, rtol=tolerance, atol=0.0, restart=200,
                         maxiter=maxiter, callback=cb, callback_type="pr_norm")
    stats["iterations"] = count[0]
    stats["info"] = int(info)
    return x


def _refine_extended(A, b, x, lu, tolerance, stats, max_steps=5):
    """Iterative refinement with residuals and iterate in extended precision.

    Near the incompressible limit the double-precision residual floor is
    about eps * ||A|| ||x|| / ||b||, which can exceed the tolerance.
    """
    Al = A.astype(np.longdouble)
    bl = b.astype(np.longdouble)
    nb = np.sqrt(np.sum(bl * bl))
    xl = x.astype(np.longdouble)
    res = np.inf
    for step in range(1, max_steps + 1):
        r = bl - Al @ xl
        res = float(np.sqrt(np.sum(r * r)) / nb)
        if res <= tolerance:
            break
        xl = xl + lu.solve(r.astype(float))
    else:
        r = bl - Al @ xl
        res = float(np.sqrt(np.sum(r * r)) / nb)
    stats["extended_refinement_steps"] = step
    return xl, res


def solve(system, tolerance: float = DEFAULT_TOLERANCE, method: str = "direct",
          maxiter: int = 1000) -> SolveReport:
    """Solve ``A x = b`` and check ``||b - Ax|| / ||b|| <= tolerance``.

    ``system`` is a LinearSystem or an ``(A, b)`` pair.  The direct path
    falls back to iterative refinement in extended precision when the
    first residual is above tolerance.
    """
    A, b = (system.A, system.b) if hasattr(system, "A") else system
    A = sparse.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible system shapes {A.shape} and {b.shape}")

    start = time.perf_counter()
    stats: dict = {"n": A.shape[0], "nnz": int(A.nnz)}
    if method == "direct":
        x, lu = _direct(A, b, stats)
        res = relative_residual(A, x, b)
        if res > tolerance:
            x, res = _refine_extended(A, b, x, lu, tolerance, stats)
    elif method == "iterative":
        x = _iterative(A, b, tolerance, maxiter, stats)
        res = relative_residual(A, x, b)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    elapsed = time.perf_counter() - start

    if not np.isfinite(res) or res > tolerance:
        raise ToleranceNotReached(f"{method} solve: relative residual {res:.3e} > {tolerance:.1e}")
    log.debug("%s solve n=%d residual=%.2e in %.3fs", method, A.shape[0], res, elapsed)
    return SolveReport(x, res, method, elapsed, stats)
