"""Exception hierarchy shared across the package."""


class JointClsError(Exception):
    pass


class ShapeError(JointClsError, ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericDomainError(JointClsError, ArithmeticError):
    """Input outside an op's domain (log of non-positive, division by zero...)."""


class NonFiniteError(JointClsError, FloatingPointError):
    """An op produced NaN (or an unexpected infinity)."""


class ContractError(JointClsError, ValueError):
    """A documented precondition of a function was violated."""


class ConfigError(JointClsError, ValueError):
    pass


class VocabError(JointClsError, ValueError):
    pass


class SequenceLengthError(JointClsError, ValueError):
    pass


class LabelOverflowError(SequenceLengthError):
    """Label block alone does not fit in the maximum sequence length."""


class DatasetError(JointClsError, ValueError):
    """Malformed or invalid dataset record."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SplitError(JointClsError, ValueError):
    pass
