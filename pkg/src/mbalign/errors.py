"""Exception hierarchy shared by every module of the package.

The CLI maps these onto process exit codes: :class:`DataError` subclasses
exit with status 2, :class:`NumericalError` subclasses with status 3.
"""


class AlignmentError(Exception):
    """Base class for all package errors."""


class DataError(AlignmentError):
    """Problem with input data (files, shapes, dictionaries)."""


class NumericalError(AlignmentError):
    """An algorithm could not produce a trustworthy result."""


class DimensionMismatch(DataError, ValueError):
    pass


class NonFiniteInput(NumericalError, ValueError):
    pass


class NonConvergence(NumericalError):
    pass


class SingularSystem(NumericalError):
    """The (alpha, beta) system of the tangent projection is singular.

    Usually means the base point has drifted onto the polytope boundary.
    """


class RetractionOverflow(NumericalError, OverflowError):
    """``t * xi / Y`` leaves the exponent range; the caller should shrink t."""


class NumericalUnderflow(NumericalError):
    """The Gibbs kernel ``exp(-cost / eps)`` underflows (eps too small)."""


class LineSearchFailure(NumericalError):
    """Backtracking shrank the step below the floor without sufficient decrease."""


class MalformedHeader(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line_no, reason="", path=None):
        self.line_no = line_no
        self.reason = reason
        self.path = path
        msg = f"malformed row at line {line_no}"
        if path is not None:
            msg = f"{path}: {msg}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class MalformedLine(MalformedRow):
    pass


class EmptyFile(DataError):
    pass


class EmptyDictionary(DataError):
    pass


class RankDeficiencyWarning(UserWarning):
    """Procrustes cross-covariance is (numerically) rank deficient."""
