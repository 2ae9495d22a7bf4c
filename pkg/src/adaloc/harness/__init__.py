from adaloc.harness.config import (
    ConfigError,
    ExperimentConfig,
    FilterSection,
    LocalizationSection,
    ModelSection,
    ObservationSection,
    OracleSection,
    SweepSection,
    bundled_config_path,
    bundled_configs,
    load,
    loads,
)
from adaloc.harness.experiment import (
    ExperimentRecord,
    TwinSetup,
    build_model,
    compute_rmse,
    rng_streams,
    run_experiment,
    synthesize_truth_and_obs,
)
from adaloc.harness.sweep import SweepPoint, best_per_alpha, sweep, sweep_points

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentRecord",
    "FilterSection",
    "LocalizationSection",
    "ModelSection",
    "ObservationSection",
    "OracleSection",
    "SweepPoint",
    "SweepSection",
    "TwinSetup",
    "best_per_alpha",
    "build_model",
    "bundled_config_path",
    "bundled_configs",
    "compute_rmse",
    "load",
    "loads",
    "rng_streams",
    "run_experiment",
    "sweep",
    "sweep_points",
    "synthesize_truth_and_obs",
]
