"""Local SGD with diagonal preconditioning: simulator, preconditioners and rate calculators."""

from .engine import (
    FedAdaGradConfig,
    RunRecord,
    SavicConfig,
    SyncSchedule,
    compute_V,
    iterations_to_epsilon,
    run_fedadagrad,
    run_minibatch_sgd,
    run_savic,
    weighted_average,
)
from .errors import ConfigurationError, ContractViolation, NoUniqueOptimum
from .preconditioners import BetaSchedule, DiagPrecondState, PrecondConfig
from .problems import ProblemSuite, exact_optimum, generate_heterogeneous, sigma_dif_sq
from .theory import RateParams

__version__ = "0.1.0"
