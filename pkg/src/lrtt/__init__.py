"""Tensor-train numerics, rank reduction by Riemannian gradient descent and TT networks."""
from .errors import (ConfigError, ContainerError, IndexOutOfRange, LabelMismatch, LrttError,
                     NumericalFailure, ShapeMismatch, SplitOutOfRange)
from .retraction import RetractReport, retract, retract_literal, retract_orthogonal
from .rgd import ConvergenceTrace, RgdConfig, rgd_compress, rgd_step
from .tt import (TTMatrix, TTVector, param_count, tt_full, tt_matrix_from_dense,
                 tt_matrix_full, tt_matvec, tt_norm, tt_svd)

__all__ = [
    "ConfigError", "ContainerError", "ConvergenceTrace", "IndexOutOfRange", "LabelMismatch",
    "LrttError", "NumericalFailure", "RetractReport", "RgdConfig", "ShapeMismatch",
    "SplitOutOfRange", "TTMatrix", "TTVector", "param_count", "retract", "retract_literal",
    "retract_orthogonal", "rgd_compress", "rgd_step", "tt_full", "tt_matrix_from_dense",
    "tt_matrix_full", "tt_matvec", "tt_norm", "tt_svd",
]
