"""Federated learning simulator: hybrid GD / inexact-ADMM trainer, the
standard baselines, a non-i.i.d. data generator, and an experiment harness."""

from .baselines import BaselineKind, BaselineParams, default_baseline_params, run_fedavg, run_fedpd, run_fedprox
from .core import (
    AlgoParams,
    ClientState,
    RunTrace,
    ServerState,
    aggregate,
    augmented_lagrangian,
    initialize,
    objective,
    objective_gradient,
    run,
    select_clients,
    stationarity_residuals,
)
from .data import (
    FederatedProblem,
    SyntheticSpec,
    generate_linear_noniid,
    load_dataset,
    partition_dataset,
)
from .harness import ExperimentConfig, run_algorithm, run_experiment, summarize
from .losses import (
    BoundVariant,
    ClientDataset,
    CurvatureBound,
    LossKind,
    LossModel,
    curvature_bound,
    loss_gradient,
    loss_value,
    spectral_norm,
)

__version__ = "0.1.0"
