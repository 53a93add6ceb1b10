"""Material law and benchmark problem definitions (plane strain)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .errors import IncompressibleLimit, NonPositive
from .mesh import DistortionSpec, QuadMesh, all_dirichlet, classify_boundary, distort, unit_square_mesh

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    lame_lambda: float
    shear_modulus: float

    @property
    def lam(self) -> float:
        return self.lame_lambda

    @property
    def mu(self) -> float:
        return self.shear_modulus


def make_material(E: float, nu: float) -> MaterialParams:
    if E <= 0.0:
        raise NonPositive(f"Young's modulus must be positive, got {E}")
    if nu >= 0.5:
        raise IncompressibleLimit(f"Poisson ratio {nu} is at or beyond the incompressible limit")
    if nu <= 0.0:
        raise NonPositive(f"Poisson ratio must be positive, got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return MaterialParams(E, nu, lam, mu)


def material_with_shear(mu: float, nu: float) -> MaterialParams:
    """Material with prescribed shear modulus, E = 2 mu (1 + nu)."""
    return make_material(2.0 * mu * (1.0 + nu), nu)


def stress(material: MaterialParams, strain):
    """sigma = 2 mu eps + lambda tr(eps) I for strain tensors of shape (..., 2, 2)."""
    eps = np.asarray(strain, dtype=float)
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    sig = 2.0 * material.mu * eps
    sig[..., 0, 0] += material.lam * tr
    sig[..., 1, 1] += material.lam * tr
    return sig


def strain_from_gradient(grad):
    g = np.asarray(grad, dtype=float)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


@dataclass
class BenchmarkProblem:
    """Everything needed to build and solve one boundary value problem.

    Field callables take points of shape (..., 2).  ``traction_data`` also
    receives the outward unit normals.  ``exact_gradient`` returns
    ``G[..., i, j] = d u_i / d x_j``.
    """

    name: str
    material: MaterialParams
    body_force: VectorField
    dirichlet_data: VectorField
    traction_data: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dirichlet_rule: Callable[[np.ndarray], bool] = all_dirichlet
    exact_solution: Optional[VectorField] = None
    exact_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    reference_policy: str = "closed_form"
    metadata: dict = field(default_factory=dict)

    @property
    def has_exact(self) -> bool:
        return self.exact_solution is not None and self.exact_gradient is not None

    def exact_stress(self, points):
        if self.exact_gradient is None:
            return None
        return stress(self.material, strain_from_gradient(self.exact_gradient(points)))

    def build_mesh(self, levels: int, distortion: DistortionSpec | None = None) -> QuadMesh:
        """Unit-square mesh at ``levels``, classified, then distorted."""
        mesh = classify_boundary(unit_square_mesh(levels), self.dirichlet_rule)
        if distortion is not None:
            mesh = distort(mesh, distortion)
        return mesh


def _zero_vector(points, normals=None):
    p = np.asarray(points, dtype=float)
    return np.zeros(p.shape[:-1] + (2,))


def _left_face(point) -> bool:
    return abs(point[0]) < 1e-12


# ----------------------------------------------------------------- square plate


def square_plate_force(x, y, lam):
    """Body force of the clamped unit plate with mu = 1."""
    c = 0.04 * np.pi**2
    tail = -np.cos(np.pi * (x + y)) + 2.0 / (1.0 + lam) * np.sin(np.pi * x) * np.sin(np.pi * y)
    fx = c * (4.0 * np.sin(2 * np.pi * y) * (-1.0 + 2.0 * np.cos(2 * np.pi * x)) + tail)
    fy = c * (4.0 * np.sin(2 * np.pi * x) * (1.0 - 2.0 * np.cos(2 * np.pi * y)) + tail)
    return fx, fy


def square_plate_problem(nu: float, reference: str = "surrogate") -> BenchmarkProblem:
    """Unit plate, mu = 1, fixed on all edges, loaded by the plate body force.

    By default errors are measured against a fine-mesh solve.  With
    ``reference="closed_form"`` the displacement field whose load is exactly
    this body force is attached as the exact solution instead.
    """
    material = material_with_shear(1.0, nu)
    lam = material.lam

    def force(points):
        p = np.asarray(points, dtype=float)
        fx, fy = square_plate_force(p[..., 0], p[..., 1], lam)
        return np.stack([fx, fy], axis=-1)

    problem = BenchmarkProblem(
        name="square_plate",
        material=material,
        body_force=force,
        dirichlet_data=_zero_vector,
        traction_data=_zero_vector,
        dirichlet_rule=all_dirichlet,
    )
    if reference == "closed_form":
        mms = manufactured_problem(material, "trig")
        problem.exact_solution = mms.exact_solution
        problem.exact_gradient = mms.exact_gradient
        problem.reference_policy = "closed_form"
    elif reference == "surrogate":
        problem.reference_policy = "fine_mesh_surrogate"
    else:
        raise ValueError(f"unknown reference policy {reference!r}")
    return problem


# ------------------------------------------------------------ cantilever beam

BEAM_MAX_TRACTION = 3000.0
BEAM_YOUNGS_MODULUS = 1_500_000.0


def beam_traction_profile(y, profile: str = "tent"):
    """Shear traction on the free end; both profiles peak at 3000."""
    y = np.asarray(y, dtype=float)
    if profile == "tent":
        return BEAM_MAX_TRACTION * (1.0 - np.abs(2.0 * y - 1.0))
    if profile == "ramp":
        return BEAM_MAX_TRACTION * y
    raise ValueError(f"unknown beam load profile {profile!r}")


def cantilever_problem(nu: float, profile: str = "tent") -> BenchmarkProblem:
    """Unit-square beam clamped at x = 0, shear-loaded at x = 1."""
    material = make_material(BEAM_YOUNGS_MODULUS, nu)

    def traction(points, normals):
        p = np.asarray(points, dtype=float)
        out = np.zeros(p.shape[:-1] + (2,))
        right = np.abs(p[..., 0] - 1.0) < 1e-9
        out[..., 1] = np.where(right, beam_traction_profile(p[..., 1], profile), 0.0)
        return out

    return BenchmarkProblem(
        name="cantilever",
        material=material,
        body_force=_zero_vector,
        dirichlet_data=_zero_vector,
        traction_data=traction,
        dirichlet_rule=_left_face,
        reference_policy="fine_mesh_surrogate",
        metadata={"beam_profile": profile},
    )


# ------------------------------------------------------- manufactured fields

_x, _y = sp.symbols("x y", real=True)


def _catalogue(choice: str, mu: float, lam: float):
    pi = sp.pi
    if choice == "linear":
        return [(_x + 2 * _y) / 1000, (3 * _x - _y) / 1000]
    if choice == "sine":
        s = sp.sin(pi * _x) * sp.sin(pi * _y) / 10
        return [s, s]
    if choice == "solenoidal":
        psi = sp.sin(pi * _x) ** 2 * sp.sin(pi * _y) ** 2
        return [sp.diff(psi, _y) / 10, -sp.diff(psi, _x) / 10]
    if choice == "trig":
        # solenoidal part plus a compressible part that fades like mu/(mu+lambda)
        s = sp.Float(mu / (mu + lam)) * sp.sin(pi * _x) * sp.sin(pi * _y)
        a = sp.Rational(1, 25)
        return [
            a * (sp.sin(2 * pi * _y) * (sp.cos(2 * pi * _x) - 1) + s),
            a * (sp.sin(2 * pi * _x) * (1 - sp.cos(2 * pi * _y)) + s),
        ]
    raise ValueError(f"unknown manufactured solution {choice!r}; "
                     f"choose from {', '.join(MANUFACTURED_CHOICES)}")


MANUFACTURED_CHOICES = ("linear", "sine", "solenoidal", "trig")


def _vectorize(exprs, shape):
    fn = sp.lambdify((_x, _y), exprs, "numpy")

    def evaluate(points):
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        out = np.empty(p.shape[:-1] + shape)
        vals = fn(x, y)
        for idx in np.ndindex(*shape):
            v = vals
            for i in idx:
                v = v[i]
            out[(Ellipsis,) + idx] = v
        return out

    return evaluate


def manufactured_problem(material: MaterialParams, choice: str = "trig",
                         dirichlet_rule=all_dirichlet) -> BenchmarkProblem:
    """Problem with a catalogued smooth exact displacement; f = -div sigma(u)."""
    mu, lam = material.mu, material.lam
    u = _catalogue(choice, mu, lam)
    X = (_x, _y)
    grad = [[sp.diff(u[i], X[j]) for j in range(2)] for i in range(2)]
    div = grad[0][0] + grad[1][1]
    sig = [[mu * (grad[i][j] + grad[j][i]) + (lam * div if i == j else 0) for j in range(2)]
           for i in range(2)]
    f = [-(sp.diff(sig[i][0], _x) + sp.diff(sig[i][1], _y)) for i in range(2)]

    u_fn = _vectorize(u, (2,))
    grad_fn = _vectorize(grad, (2, 2))
    f_fn = _vectorize(f, (2,))
    sig_fn = _vectorize(sig, (2, 2))

    def traction(points, normals):
        return np.einsum("...ij,...j->...i", sig_fn(points), normals)

    return BenchmarkProblem(
        name=f"manufactured:{choice}",
        material=material,
        body_force=f_fn,
        dirichlet_data=u_fn,
        traction_data=traction,
        dirichlet_rule=dirichlet_rule,
        exact_solution=u_fn,
        exact_gradient=grad_fn,
        reference_policy="manufactured",
        metadata={"choice": choice},
    )


def make_problem(name: str, nu: float, **options) -> BenchmarkProblem:
    """Look up a benchmark by harness name.

    Names are ``square_plate``, ``cantilever`` and ``manufactured:<choice>``;
    manufactured problems use mu = 1 unless ``E`` is given.
    """
    if name == "square_plate":
        return square_plate_problem(nu, reference=options.get("reference", "surrogate"))
    if name == "cantilever":
        return cantilever_problem(nu, profile=options.get("beam_profile", "tent"))
    if name.startswith("manufactured:"):
        E = options.get("E")
        material = material_with_shear(1.0, nu) if E is None else make_material(float(E), nu)
        return manufactured_problem(material, name.split(":", 1)[1])
    raise ValueError(f"unknown problem {name!r}")
