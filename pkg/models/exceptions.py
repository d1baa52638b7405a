from typing import Optional


class DriftplanError(Exception):
    """Base class for every error raised by the library"""


class FieldConstructionError(DriftplanError, ValueError):
    pass


class CurrentParseError(DriftplanError, ValueError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class CurrentSchemaError(DriftplanError, ValueError):
    pass


class CropError(DriftplanError, ValueError):
    pass


class ConfigurationError(DriftplanError, ValueError):
    pass


class ControlRangeError(DriftplanError, ValueError):
    pass


class CheckpointFormatError(DriftplanError):
    pass


class SolverDivergenceError(DriftplanError):
    def __init__(self, iteration: int, cost: float):
        self.iteration = iteration
        self.cost = cost
        super().__init__(f"iLQR cost diverged to {cost} at iteration {iteration}")
