from typing import Any


class LodestarError(Exception):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class NonFiniteInputError(LodestarError):
    pass


class DimensionMismatchError(LodestarError):
    pass


class WindowOverflowError(LodestarError):
    pass


class InvalidPoseIndexError(LodestarError):
    pass


class InsufficientSamplesError(LodestarError):
    pass


class SingularNormalMatrixError(LodestarError):
    """Raised when the iterated update cannot invert its normal matrix.

    `state` and `iterations` describe the last accepted iterate so callers can
    carry it forward.
    """

    def __init__(self, detail: str, state: Any = None, iterations: int = 0):
        super().__init__(detail)
        self.state = state
        self.iterations = iterations


class TrajectoryError(LodestarError):
    pass


class ScenarioError(LodestarError):
    pass


class DatasetError(LodestarError):
    pass


class ConfigError(LodestarError):
    def __init__(self, detail: str, keys: list[str] | None = None):
        super().__init__(detail)
        self.keys = keys or []


class InitializationError(LodestarError):
    pass


class InvalidTimestepError(LodestarError):
    pass
