"""Exception hierarchy shared by all quadip modules."""


class QuadipError(Exception):
    """Base class for every error raised by the package."""


# mesh
class MeshError(QuadipError):
    pass


class DistortionRejected(MeshError):
    pass


class NonManifold(MeshError):
    pass


class EmptyDirichletSet(MeshError):
    pass


class InvariantViolation(MeshError):
    pass


class ParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshNotClassified(MeshError):
    pass


# fem core
class SingularJacobian(QuadipError):
    pass


class UnsupportedOrder(QuadipError):
    pass


# model
class IncompressibleLimit(QuadipError):
    pass


class NonPositive(QuadipError):
    pass


# assembly
class ConfigMismatch(QuadipError):
    pass


# solver
class SolveFailed(QuadipError):
    pass


class SingularMatrix(SolveFailed):
    pass


class ToleranceNotReached(SolveFailed):
    pass


# postprocess
class SingularMass(QuadipError):
    pass


class MissingExact(QuadipError):
    pass


class ZeroError(QuadipError):
    pass


# harness
class SpecError(QuadipError):
    pass


class InsufficientData(QuadipError):
    pass
