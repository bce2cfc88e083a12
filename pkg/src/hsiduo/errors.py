"""Exception hierarchy shared by all hsiduo modules."""


class HsiduoError(Exception):
    """Base class for all package errors."""


class DimensionError(HsiduoError):
    """Shape or length contract violated."""


class ConfigError(HsiduoError):
    """Invalid configuration value or combination."""


class DataError(HsiduoError):
    """Dataset content violates a precondition (e.g. a class too small to split)."""


class IngestionError(HsiduoError):
    """File loading failed: missing file, bad header, byte-count mismatch."""


class NumericError(HsiduoError):
    """Non-finite value detected during computation."""


class MetricError(HsiduoError):
    """Metric undefined for the given confusion matrix or trial list."""
