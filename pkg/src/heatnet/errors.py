"""Exception hierarchy shared across the package."""


class HeatNetError(Exception):
    """Base class for all package errors."""


class DimensionError(HeatNetError, ValueError):
    pass


class RankError(DimensionError):
    pass


class EmptyNeighborhoodError(HeatNetError, ValueError):
    pass


class ConfigurationError(HeatNetError, ValueError):
    pass


class TruncationError(HeatNetError, ValueError):
    """An agent does not have enough recorded history."""


class ParseError(HeatNetError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(HeatNetError, ValueError):
    pass


class FormatError(HeatNetError, ValueError):
    pass


class MetadataError(HeatNetError, ValueError):
    pass


class MaskError(HeatNetError, ValueError):
    pass


class MetricError(HeatNetError, ValueError):
    pass


class CompatibilityError(HeatNetError, ValueError):
    pass


class TrainingError(HeatNetError, RuntimeError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class HorizonError(MetricError, IndexError):
    """A requested horizon step lies outside the predicted trajectory."""
