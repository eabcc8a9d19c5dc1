"""Exception hierarchy shared by all qmel modules."""


class QmelError(Exception):
    """Base class for every error raised by qmel."""


class SlopeSumError(QmelError, ValueError):
    pass


class SlopeRangeError(QmelError, ValueError):
    pass


class PartitionAlignmentError(QmelError, ValueError):
    pass


class NotDecomposableError(QmelError, ValueError):
    pass


class DigitRangeError(QmelError, ValueError):
    pass


class NegativeWeightError(QmelError, ValueError):
    pass


class InconsistentMeasureError(QmelError, ValueError):
    pass


class SizeError(QmelError, ValueError):
    pass


class DepthError(QmelError, ValueError):
    pass


class DimensionError(QmelError, ValueError):
    pass


class IntegrationError(QmelError, ArithmeticError):
    pass


class ConvergenceError(QmelError, ArithmeticError):
    pass


class DeltaTooLargeError(QmelError, ValueError):
    pass


class AlignmentError(QmelError, ValueError):
    pass


class NormConvergenceError(ConvergenceError):
    pass


class NotTpError(QmelError, ValueError):
    pass


class ResidualError(QmelError, ArithmeticError):
    pass


class NotEigenvectorError(QmelError, ValueError):
    pass


class PrecondError(QmelError, ValueError):
    pass


class NotEigenstateError(QmelError, ValueError):
    pass
