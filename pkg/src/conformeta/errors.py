"""Exception types shared across the package.

Each error class carries the process exit code the CLI maps it to.
"""


class ConformetaError(Exception):
    exit_code = 1


class InvalidInputError(ConformetaError, ValueError):
    exit_code = 2


class InvalidGramError(InvalidInputError):
    pass


class InfeasibleConfidenceError(InvalidInputError):
    pass


class NumericalFailure(ConformetaError, ArithmeticError):
    exit_code = 3


class IdiocentricityViolation(NumericalFailure):
    pass
