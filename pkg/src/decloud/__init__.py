"""Cloud removal and scene recovery for image sequences.

Estimates which pixels are occluded by clouds (dark-channel thresholding
with an always-white rescue stage), then reconstructs the hidden scene by
robust, temporally smoothed low-rank matrix completion solved with augmented
Lagrangian methods.
"""

from .baselines import (
    NoObservationsError,
    interpolate_temporal,
    solve_mc,
    solve_rmc,
    solve_tecmac,
    solve_tecromac,
)
from .detection import DetectionReport, DetectorConfig, detect_clouds
from .simulation import (
    CloudSimParams,
    ExperimentReport,
    composite_clouds,
    generate_cloud_alpha,
    rre,
    run_experiment,
    smooth_lowrank_sequence,
)
from .solver import (
    DivergenceError,
    Solution,
    SolverConfig,
    solve,
    solve_alt,
    solve_ipg,
)
from .tensor_ops import (
    DataMatrix,
    ImageSequence,
    ObservationMask,
    economy_svd,
    nuclear_norm,
    reshape_to_matrix,
    reshape_to_sequence,
    soft_threshold,
    svt,
    temporal_diff,
    temporal_laplacian,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ImageSequence",
    "DataMatrix",
    "ObservationMask",
    "reshape_to_matrix",
    "reshape_to_sequence",
    "temporal_diff",
    "temporal_laplacian",
    "soft_threshold",
    "svt",
    "economy_svd",
    "nuclear_norm",
    "DetectorConfig",
    "DetectionReport",
    "detect_clouds",
    "SolverConfig",
    "Solution",
    "DivergenceError",
    "solve",
    "solve_ipg",
    "solve_alt",
    "NoObservationsError",
    "interpolate_temporal",
    "solve_mc",
    "solve_rmc",
    "solve_tecmac",
    "solve_tecromac",
    "CloudSimParams",
    "ExperimentReport",
    "generate_cloud_alpha",
    "composite_clouds",
    "rre",
    "smooth_lowrank_sequence",
    "run_experiment",
]
