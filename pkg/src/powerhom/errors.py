class PowerhomError(Exception):
    pass


class NonConvergence(PowerhomError):
    """Iteration budget exhausted; carries the best iterate found."""

    def __init__(self, message, best=None, residual=float("nan"), xi=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.xi = xi


class SingularSystem(PowerhomError):
    pass


class WrongMicrostructure(PowerhomError):
    pass


class ResolutionMismatch(PowerhomError):
    pass


class TableRangeExceeded(PowerhomError):
    pass


class ConfigError(PowerhomError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
