"""Exception types raised across the package."""


class DebiasError(Exception):
    """Base class for all package errors."""


class ValidationError(DebiasError):
    """Input failed schema or invariant validation."""


class InsufficientSamples(DebiasError):
    pass


class RankDeficientBasis(DebiasError):
    pass


class DegenerateVariance(DebiasError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class SingleGroup(DebiasError):
    pass


class InvalidProportion(DebiasError):
    pass


class EmptyList(DebiasError):
    pass


class DimensionMismatch(DebiasError):
    pass


class DegenerateProjection(DebiasError):
    pass


class FoldDegeneracy(DebiasError):
    pass


class AllAbstained(DebiasError):
    """No lambda in the grid satisfied the confounding constraint."""

    def __init__(self, message, selection=None):
        super().__init__(message)
        self.selection = selection


class InvalidSpec(ValidationError):
    """Simulation spec failed validation; ``problems`` maps field -> message."""

    def __init__(self, problems):
        self.problems = dict(problems)
        detail = "; ".join(f"{k}: {v}" for k, v in self.problems.items())
        super().__init__(f"invalid simulation spec: {detail}")


class UnknownPreset(DebiasError):
    pass


class IndexOutOfRange(DebiasError):
    pass
