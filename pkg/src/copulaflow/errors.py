"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data and model-file
problems exit 2, numeric/training failures exit 3.
"""


class CopulaFlowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CopulaFlowError):
    """Invalid configuration value (bin counts, layer sizes, fractions)."""


class ParameterError(CopulaFlowError):
    """Invalid numeric parameters (non-finite entries, bad bounds)."""


class DataError(CopulaFlowError):
    """Bad input data: NaNs, unparseable cells, missing columns."""


class DegenerateDataError(DataError):
    """Data carries no usable signal for the requested model (e.g. a
    constant column handed to a continuous marginal fit)."""


class TrainingError(CopulaFlowError):
    """Numeric failure during optimization (non-finite loss or gradient)."""

    def __init__(self, message, batch_index=None):
        if batch_index is not None:
            message = f"{message} (batch index {batch_index})"
        super().__init__(message)
        self.batch_index = batch_index


class ModelFileError(CopulaFlowError):
    """Unreadable, truncated, or incompatible model file."""


class ModelVersionError(ModelFileError):
    """Model file format version is not supported."""

    def __init__(self, found, supported):
        super().__init__(
            f"model file has format version {found}, "
            f"this build supports version {supported}"
        )
        self.found = found
        self.supported = supported
