"""Particle island algorithms for Feynman-Kac models.

Populations of ``m1`` islands with ``m2`` particles each evolve by island-level
selection, individual-level selection and importance-sampling mutation. The
package also provides exact variance oracles for finite state spaces and
Monte Carlo probes that check the simulated behaviour against them.
"""

from .algorithms import ChainConfig, ChainResult, StepTelemetry, normalizing_constant, run_chain
from .core import (
    Archipelago,
    boltzmann_weigh,
    cv_criterion,
    ess,
    multinomial_draw,
    mutate,
    renormalize_island_weights,
    select_individuals,
    select_islands,
    weighted_estimate,
)
from .diagnostics import (
    accuracy_probe,
    clt_check,
    deviation_probe,
    exact_expectation,
    replicate_estimates,
)
from .errors import (
    ArchipelagoError,
    ConfigurationError,
    DegeneracyError,
    DomainError,
    EvaluationError,
)
from .feynman_kac import (
    FeynmanKacModel,
    FiniteFK,
    Lgssm,
    exact_flow,
    exact_prediction_flow,
    kalman_filter,
    model_from_dict,
    simulate_observations,
)
from .oracle import closed_form_variance, mixing_bound, recursive_variance
from .rng import RngStream, Role

__version__ = "0.1.0"
