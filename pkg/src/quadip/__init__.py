"""Under-integrated interior penalty DG for near-incompressible plane-strain elasticity on Q1 quads."""

from .assembly import METHODS, LinearSystem, MethodConfig, assemble, dof_count, method_config
from .errors import QuadipError
from .harness import ConvergenceRecord, ExperimentSpec, compare_uniformity, parse_spec, run_experiment
from .mesh import DistortionSpec, QuadMesh, classify_boundary, distort, mesh_size, read_mesh, unit_square_mesh, write_mesh
from .model import BenchmarkProblem, MaterialParams, make_material, make_problem
from .postprocess import DiscreteField, displacement_error, recover_stress, stress_error
from .solver import SolveReport, solve

__version__ = "0.1.0"

__all__ = [
    "METHODS", "LinearSystem", "MethodConfig", "assemble", "dof_count", "method_config",
    "QuadipError", "ConvergenceRecord", "ExperimentSpec", "compare_uniformity", "parse_spec",
    "run_experiment", "DistortionSpec", "QuadMesh", "classify_boundary", "distort", "mesh_size",
    "read_mesh", "unit_square_mesh", "write_mesh", "BenchmarkProblem", "MaterialParams",
    "make_material", "make_problem", "DiscreteField", "displacement_error", "recover_stress",
    "stress_error", "SolveReport", "solve",
]
