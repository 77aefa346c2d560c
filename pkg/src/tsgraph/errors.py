"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shape, arity, domain)."""


class IngestionError(ValueError):
    """A CSV file could not be read as a time series frame."""


class SchemaError(ValueError):
    """Input data does not match the schema a model was trained with."""


class FitError(RuntimeError):
    """A statistical fit could not be completed (e.g. rank-deficient design)."""


class DiagnosticError(RuntimeError):
    """A numeric check produced a non-finite or otherwise unusable value."""
