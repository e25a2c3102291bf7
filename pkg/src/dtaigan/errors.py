"""Exception hierarchy.

``ValidationError`` covers bad inputs and configuration (CLI exit code 1);
``NumericalError`` covers failures discovered while computing (exit code 2).
"""


class DtaiganError(Exception):
    exit_code = 2


class ValidationError(DtaiganError, ValueError):
    exit_code = 1


class SchemaError(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class DegenerateColumnError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class ContractError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class NumericalError(DtaiganError, ArithmeticError):
    exit_code = 2


class DivergenceError(NumericalError):
    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class FactorizationError(NumericalError):
    pass


class GradientSingularityError(NumericalError):
    pass
