"""Exception types raised across the engine."""


class ContractError(ValueError):
    """A precondition on the shape or content of an argument was violated."""


class DomainError(ValueError):
    """A scalar argument (usually a timestep) is outside its valid domain."""


class InputFormatError(ValueError):
    pass


class PointCountError(ValueError):
    pass


class UnrecoverablePlacementError(RuntimeError):
    """An object already intersects another object at t = 0."""


class NumericError(ArithmeticError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(IOError):
    pass


class ConfigError(ValueError):
    pass


class UnresolvedEntityError(LookupError):
    pass
