"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: ``ConfigError`` -> 1,
``MissingArtifactError`` -> 2, ``NumericError`` -> 3.
"""


class RiskFusionError(Exception):
    """Base class for all package errors."""


class ConfigError(RiskFusionError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class MissingArtifactError(RiskFusionError):
    def __init__(self, stage: str, path):
        super().__init__(f"missing artifact {path}; run the `{stage}` stage first")
        self.stage = stage
        self.path = path


class DataError(RiskFusionError):
    """Malformed or inconsistent input data."""


class CorruptInputError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class NumericError(RiskFusionError):
    """Non-finite values or divergence during numeric computation."""


class ShapeError(RiskFusionError, ValueError):
    pass
