"""Simulation toolkit for multi-spike tensor and matrix PCA on the Stiefel manifold."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BlowUpError,
    BudgetError,
    ConfigError,
    ConventionError,
    DimensionError,
    NumericalError,
    OrderingError,
    SingularMatrixError,
    SpikedPCAError,
    UnsupportedError,
)
from .manifold import Scale, StiefelPoint, correlation_matrix, polar_retract, sample_invariant  # noqa: E402
from .model import NoiseSpec, SpikedModel, make_model, sample_noise  # noqa: E402

__all__ = [
    "__version__",
    "BlowUpError",
    "BudgetError",
    "ConfigError",
    "ConventionError",
    "DimensionError",
    "NumericalError",
    "OrderingError",
    "SingularMatrixError",
    "SpikedPCAError",
    "UnsupportedError",
    "Scale",
    "StiefelPoint",
    "correlation_matrix",
    "polar_retract",
    "sample_invariant",
    "NoiseSpec",
    "SpikedModel",
    "make_model",
    "sample_noise",
]
