"""Time-series classification with bags of recurrence-plot texture words."""

from .baselines import baseline_1nn_dtw, baseline_1nn_euclidean, dtw_distance
from .codebook import Codebook, LlcParams, kmeans, llc_code, llc_encode, optimize_codebook, pool_image
from .dsift import PatchGridParams, dense_descriptors
from .errors import BorError, ConfigError, DataError, NumericError
from .experiments import compare_runtime, grid_cells, sweep
from .pipeline import ExperimentReport, PipelineConfig, TrainedModel, fit, run_experiment
from .rp import EmbeddingParams, distance_matrix, embed, encode_series, to_recurrence_image
from .timeseries_io import Dataset, TimeSeries, load_dataset, load_ucr_file

__version__ = "0.1.0"

__all__ = [
    "BorError", "Codebook", "ConfigError", "DataError", "Dataset", "EmbeddingParams", "ExperimentReport",
    "LlcParams", "NumericError", "PatchGridParams", "PipelineConfig", "TimeSeries", "TrainedModel",
    "baseline_1nn_dtw", "baseline_1nn_euclidean", "compare_runtime", "dense_descriptors", "distance_matrix",
    "dtw_distance", "embed", "encode_series", "fit", "grid_cells", "kmeans", "llc_code", "llc_encode",
    "load_dataset", "load_ucr_file", "optimize_codebook", "pool_image", "run_experiment", "sweep",
    "to_recurrence_image",
]
