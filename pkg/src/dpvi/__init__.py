"""Dynamic-weight particle variational inference.

Evolves both the positions and the weights of a particle set toward a target
distribution by discretizing a combined transport + mass-reaction flow, with
fixed-weight counterparts (SVGD, GFSD, Blob, KSDD), duplicate/kill variants,
Langevin baselines, exact transport-based evaluation metrics, and a
reproducible experiment harness.
"""

from .engine import AlgorithmSpec, Ensemble, RunRecord, WeightOvershootWarning, run
from .harness import (
    ConfigError,
    ExperimentConfig,
    ResultsTable,
    build_target,
    load_config,
    run_experiment,
    validate_config,
    write_outputs,
)
from .kernels import KernelConfig, median_bandwidth, rbf, stein_gram, stein_kernel
from .metrics import DiscreteMeasure, TransportPlan, component_mass, ksd_squared, w2_bruteforce, w2_exact
from .targets import (
    GaussianMixtureTarget,
    GaussianTarget,
    GPRegressionTarget,
    TargetModel,
    default_gmm_target,
    grid_reference,
    load_lidar,
    sample_reference,
    synthetic_lidar,
)
from .variation import Family, dissipation_estimate, first_variation, velocity

__version__ = "0.1.0"

__all__ = [
    "AlgorithmSpec",
    "ConfigError",
    "DiscreteMeasure",
    "Ensemble",
    "ExperimentConfig",
    "Family",
    "GPRegressionTarget",
    "GaussianMixtureTarget",
    "GaussianTarget",
    "KernelConfig",
    "ResultsTable",
    "RunRecord",
    "TargetModel",
    "TransportPlan",
    "WeightOvershootWarning",
    "build_target",
    "component_mass",
    "default_gmm_target",
    "dissipation_estimate",
    "first_variation",
    "grid_reference",
    "ksd_squared",
    "load_config",
    "load_lidar",
    "median_bandwidth",
    "rbf",
    "run",
    "run_experiment",
    "sample_reference",
    "stein_gram",
    "stein_kernel",
    "synthetic_lidar",
    "validate_config",
    "velocity",
    "w2_bruteforce",
    "w2_exact",
    "write_outputs",
    "__version__",
]
