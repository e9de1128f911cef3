"""Loss weights and sampling weights for multi-domain SGD.

Modules:
    linalg       dense SPD solves for the closed-form estimators
    data         synthetic tasks, MNIST IDX ingestion, holdout splits
    models       per-sample losses and gradients (linear, logistic, MLP)
    estimators   OLS, GLS, FGLS and Monte Carlo helpers
    weighting    One-shot FGLS, ERMA and variance-aware batch allocation
    trainer      mixed-domain SGD loop and run traces
    metrics      distances, accuracy and the holdout-gap bound
    experiments  presets, configs and replicated runs
    verify       oracle suites
"""
from .data import DomainDataset, LinearTaskSpec, LogisticTaskSpec, gen_linear, gen_logistic
from .models import Params, init_params, loss_grad
from .trainer import RunTrace, TrainConfig, train
from .weighting import DomainStats, MixtureState, SchedulerConfig

__version__ = "0.1.0"

__all__ = [
    "DomainDataset",
    "DomainStats",
    "LinearTaskSpec",
    "LogisticTaskSpec",
    "MixtureState",
    "Params",
    "RunTrace",
    "SchedulerConfig",
    "TrainConfig",
    "gen_linear",
    "gen_logistic",
    "init_params",
    "loss_grad",
    "train",
]
