"""Exception types shared across the package."""


class KGEngineError(Exception):
    """Base class for every error raised by this package."""


class ParseError(KGEngineError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


class EmptyStoreError(KGEngineError):
    """An operation that needs triples was handed none."""


class SchemaError(KGEngineError):
    """An attribute table does not match the requested fusion key."""


class ConfigError(KGEngineError):
    """A configuration value is out of range or inconsistent."""


class GenerationError(KGEngineError):
    """The synthetic generator could not satisfy its constraints."""


class IdError(KGEngineError):
    """An entity or relation id (or label) is unknown."""


class ShapeError(KGEngineError):
    """Array arguments disagree in shape."""


class FormatError(KGEngineError):
    """A checkpoint file is malformed or of an unsupported version."""


class UndefinedMetricError(KGEngineError):
    """A metric was requested over an empty input."""


class DegenerateDistributionError(KGEngineError):
    """A score distribution has no spread (or too few samples) to standardize against."""


class NonFiniteLossError(KGEngineError):
    """Training produced a non-finite loss; the epoch is aborted."""

    def __init__(self, batch_index, message="non-finite loss"):
        super().__init__(f"{message} (batch {batch_index})")
        self.batch_index = batch_index
