"""Exception hierarchy shared by every module of the package."""


class EGDError(Exception):
    """Base class for all errors raised by egd."""

    exit_code = 1


class SchemaMismatch(EGDError, ValueError):
    exit_code = 2


class RangeOverflow(EGDError, ValueError):
    exit_code = 2


class IndexOutOfRange(EGDError, IndexError):
    exit_code = 2


class EmptyDataset(EGDError, ValueError):
    exit_code = 2


class CorruptContainer(EGDError, ValueError):
    exit_code = 3


class NoCondensedData(EGDError, LookupError):
    exit_code = 4


class ShapeMismatch(EGDError, ValueError):
    exit_code = 2


class WeightMismatch(EGDError, ValueError):
    exit_code = 2


class NonFinite(EGDError, ArithmeticError):
    exit_code = 5


class NonBinaryLabels(EGDError, ValueError):
    exit_code = 2


class SingularSystem(EGDError, ArithmeticError):
    exit_code = 5


class WrongDomain(EGDError, ValueError):
    exit_code = 2
