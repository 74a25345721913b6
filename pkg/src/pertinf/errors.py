"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` and numerical
breakdowns from :class:`NumericalError`; the CLI maps the two families to
exit codes 2 and 3.
"""


class PertInfError(Exception):
    """Base class for all package errors."""


class ValidationError(PertInfError, ValueError):
    pass


class NumericalError(PertInfError, ArithmeticError):
    pass


class DomainViolation(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DegenerateCurve(ValidationError):
    pass


class DegenerateDirection(ValidationError):
    pass


class UnsupportedFamily(ValidationError):
    pass


class ZeroDirection(ValidationError):
    pass


class OrthogonalityViolation(ValidationError):
    pass


class NonMonotoneDiffeo(ValidationError):
    pass


class NoSampler(ValidationError):
    pass


class MissingColumn(ValidationError):
    pass


class NonNumericCell(ValidationError):
    pass


class EmptyCluster(ValidationError):
    pass


class IncompatibleConfig(ValidationError):
    pass


class RankDeficientDesign(NumericalError):
    pass


class GeometryUnavailable(NumericalError):
    pass


class SingularMetric(NumericalError):
    pass


class SingularHessian(NumericalError):
    pass


class ZeroHessian(NumericalError):
    """Raised where a standardized measure would divide by a zero norm."""


class NonConvergence(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class NormalizerDivergence(NumericalError):
    pass
