"""Exception hierarchy mapped to CLI exit-code categories."""


class NodeGibbsError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class ConfigError(NodeGibbsError):
    """Invalid configuration: bad field values, inconsistent dimensions."""

    exit_code = 2


class DataFormatError(NodeGibbsError):
    """Malformed input data: bad magic numbers, truncated files, label range."""

    exit_code = 3


class NumericError(NodeGibbsError):
    """Numeric failure that invalidates a computation (NaN/overflow)."""

    exit_code = 4


class StorageError(NodeGibbsError):
    """Trace or output directory inconsistent with the expected layout."""

    exit_code = 5
