"""GP-based spatial reconstruction of electromagnetic field maps.

Core pipeline: simulate a multipath field over a room grid, learn kernel
hyperparameters from sensor readings, and reconstruct the full grid with
calibrated uncertainty.  The `service` subpackage wraps the same handlers
in an HTTP app; `cli` is the command-line front end.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ContractError,
    CorrelationUndefinedError,
    DataError,
    DuplicateInputError,
    EmfieldError,
    NumericalError,
    OptimizationError,
    ParseError,
    ProtocolError,
    SingularityError,
    UnknownSensorError,
)
from .field_sim import FieldDataset, SimConfig, field_at_point, field_at_points, generate_dataset, image_sources
from .geometry import (
    CANONICAL_SOURCES,
    GridSpec,
    RoomConfig,
    SensorArray,
    SourceSpec,
    default_sensors,
    make_grid,
    pairwise_dist,
)
from .gp import Prediction, TrainedModel, fit, lml_gradient, lml_terms, log_marginal, predict, sample_predictive
from .hyperopt import HyperPrior, OptResult, map_objective, optimize
from .kernels import FAMILIES, HyperParams, KernelSpec, default_spec, gram, gram_noisy, kernel_eval, sample_gp, spec_from_natural
from .meanfn import MeanSpec, basis_eval, basis_mean, design_matrix, weight_posterior, zero_mean
from .evalsel import EvalReport, evaluate, select_model, sensor_sweep

__all__ = [
    "__version__",
    "EmfieldError",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "ParseError",
    "DuplicateInputError",
    "SingularityError",
    "CorrelationUndefinedError",
    "NumericalError",
    "OptimizationError",
    "ProtocolError",
    "UnknownSensorError",
    "RoomConfig",
    "GridSpec",
    "SensorArray",
    "SourceSpec",
    "CANONICAL_SOURCES",
    "make_grid",
    "pairwise_dist",
    "default_sensors",
    "SimConfig",
    "FieldDataset",
    "image_sources",
    "field_at_point",
    "field_at_points",
    "generate_dataset",
    "FAMILIES",
    "HyperParams",
    "KernelSpec",
    "default_spec",
    "spec_from_natural",
    "kernel_eval",
    "gram",
    "gram_noisy",
    "sample_gp",
    "MeanSpec",
    "zero_mean",
    "basis_mean",
    "basis_eval",
    "design_matrix",
    "weight_posterior",
    "TrainedModel",
    "Prediction",
    "fit",
    "log_marginal",
    "lml_terms",
    "lml_gradient",
    "predict",
    "sample_predictive",
    "HyperPrior",
    "OptResult",
    "map_objective",
    "optimize",
    "EvalReport",
    "evaluate",
    "select_model",
    "sensor_sweep",
]
