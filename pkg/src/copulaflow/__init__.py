"""copulaflow: joint density estimation and synthetic tabular data.

Univariate marginals and the multivariate dependence structure are learned as
two separate invertible spline flows and composed for density evaluation and
row generation.  All numerics run in 64-bit floats.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .errors import (  # noqa: E402
    CopulaFlowError,
    ConfigurationError,
    ParameterError,
    DataError,
    DegenerateDataError,
    TrainingError,
    ModelFileError,
    ModelVersionError,
)

__version__ = "0.1.0"

__all__ = [
    "CopulaFlowError",
    "ConfigurationError",
    "ParameterError",
    "DataError",
    "DegenerateDataError",
    "TrainingError",
    "ModelFileError",
    "ModelVersionError",
    "__version__",
]
