from adaloc.models.base import (
    ModelBlowUp,
    ModelSystem,
    propagate,
    propagate_states,
    rk4_step,
    step_schedule,
)
from adaloc.models.lorenz96 import (
    Lorenz96,
    Lorenz96Config,
    MultivariateLorenz96,
    MultivariateLorenz96Config,
    cyclic_distance,
    lorenz96_initial_condition,
    lorenz96_start,
    lorenz96_tendency,
    multivariate_forcing,
)
from adaloc.models.qg import QGConfig, QuasiGeostrophic, helmholtz_solve, qg_tendency

__all__ = [
    "ModelBlowUp",
    "ModelSystem",
    "propagate",
    "propagate_states",
    "rk4_step",
    "step_schedule",
    "Lorenz96",
    "Lorenz96Config",
    "MultivariateLorenz96",
    "MultivariateLorenz96Config",
    "cyclic_distance",
    "lorenz96_initial_condition",
    "lorenz96_start",
    "lorenz96_tendency",
    "multivariate_forcing",
    "QGConfig",
    "QuasiGeostrophic",
    "helmholtz_solve",
    "qg_tendency",
]
