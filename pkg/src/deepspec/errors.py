"""Exception hierarchy shared by all deepspec modules."""


class DeepSpecError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DeepSpecError, ValueError):
    pass


class ConfigurationError(DeepSpecError, ValueError):
    pass


class NumericDomainError(DeepSpecError, ValueError):
    pass


class ContractError(DeepSpecError, RuntimeError):
    pass


class NotPositiveDefiniteError(DeepSpecError, ValueError):
    def __init__(self, index, pivot):
        super().__init__(f"matrix is not positive definite: pivot {index} = {pivot!r}")
        self.index = index
        self.pivot = pivot


class SingularMatrixError(DeepSpecError, ValueError):
    def __init__(self, index):
        super().__init__(f"triangular matrix is singular: zero diagonal at {index}")
        self.index = index


class RankDeficiencyError(DeepSpecError, ValueError):
    pass


class GraphError(DeepSpecError, ValueError):
    pass


class AssignmentError(DeepSpecError, ValueError):
    pass


class InputError(DeepSpecError, ValueError):
    pass


class ParseError(DeepSpecError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointError(DeepSpecError, ValueError):
    pass


class NumericDivergenceError(DeepSpecError, ArithmeticError):
    pass
