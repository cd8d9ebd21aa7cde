"""Particle-island algorithms built from the archipelago primitives.

``run_chain`` implements the double bootstrap with adaptive selection on the
island level: islands are resampled only when the coefficient of variation of
their weights exceeds ``tau``. ``tau = 0`` gives the plain double bootstrap
(B2), ``tau = inf`` gives ``m1`` independent SISR filters.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import (
    Archipelago,
    boltzmann_weigh,
    cv_criterion,
    mutate,
    renormalize_island_weights,
    select_individuals,
    select_islands,
    weighted_estimate,
)
from .errors import ConfigurationError, DegeneracyError
from .rng import Role, RngStream, island_streams

MODES = ("standard", "fully_adapted_prediction", "auxiliary")


def parse_tau(value):
    """Accept a number or the strings ``"inf"``/``"+inf"``/``"infinity"``."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "+inf", "infinity", "+infinity"):
            return math.inf
        raise ConfigurationError(f"invalid tau {value!r}")
    if value is None:
        return math.inf
    return float(value)


@dataclass(frozen=True)
class ChainConfig:
    """Sizes, threshold and seed of one algorithm run."""

    m1: int
    m2: int
    tau: float = 0.0
    steps: int = 0
    seed: int = 0
    mode: str = "standard"
    auxiliary_fn: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tau", parse_tau(self.tau))
        for name in ("m1", "m2", "steps", "seed"):
            value = getattr(self, name)
            try:
                ok = not isinstance(value, (bool, str)) and int(value) == value
            except (TypeError, ValueError, OverflowError):
                ok = False
            if not ok:
                raise ConfigurationError(f"{name} must be an integer")
            object.__setattr__(self, name, int(value))
        if self.m1 < 1 or self.m2 < 1:
            raise ConfigurationError("m1 and m2 must be positive")
        if self.steps < 0 or self.seed < 0:
            raise ConfigurationError("steps and seed must be nonnegative")
        if math.isnan(self.tau) or self.tau < 0:
            raise ConfigurationError("tau must be nonnegative")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.mode == "auxiliary" and self.auxiliary_fn is None:
            object.__setattr__(self, "auxiliary_fn", "default")

    @property
    def n_particles(self):
        return self.m1 * self.m2

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return ChainConfig(**values)

    def to_dict(self):
        out = asdict(self)
        if math.isinf(self.tau):
            out["tau"] = "inf"
        return out

    @classmethod
    def from_dict(cls, data):
        known = {"m1", "m2", "tau", "steps", "seed", "mode", "auxiliary_fn"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown chain fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


@dataclass
class StepTelemetry:
    """What happened during one iteration.

    ``step`` is the index of the archipelago produced by the iteration; ``cv``
    is evaluated on the island weights entering the selection decision.
    """

    step: int
    cv: float
    sil_triggered: bool
    estimates: dict = field(default_factory=dict)
    scale_factor: float = 1.0


class ChainResult(NamedTuple):
    archipelago: Archipelago
    telemetry: list
    normalizing_constant: float


def normalizing_constant(telemetry):
    """Estimate of ``gamma_n 1``: the product of the per-step scale factors."""
    return math.prod(t.scale_factor for t in telemetry)


def _initial(model, config):
    m1, m2 = config.m1, config.m2
    parts = [
        np.asarray(model.sample_initial(m2, RngStream(config.seed, 0, i, Role.INITIAL)))
        for i in range(m1)
    ]
    return Archipelago.uniform(np.stack(parts))


def _estimates(arch, test_fns):
    return {name: weighted_estimate(arch, h) for name, h in (test_fns or {}).items()}


def resolve_auxiliary(model, name):
    """Look up a first-stage weight function ``t(p, states)`` by name."""
    if callable(name):
        return name
    if name in (None, "default"):
        return model.auxiliary_weight
    if name == "unit":
        return lambda p, states: np.ones(np.shape(states))
    raise ConfigurationError(f"unknown auxiliary function {name!r}")


def run_chain(model, config, test_fns=None, workers=1, auxiliary=None):
    """Run the adaptive double bootstrap (or its auxiliary variant).

    Parameters
    ----------
    model : FeynmanKacModel
    config : ChainConfig
    test_fns : dict of str -> callable, optional
        Functions whose weighted estimates are recorded at every step.
    workers : int
        Threads used for per-island work; results do not depend on it.
    auxiliary : callable, optional
        First-stage weight ``t(p, states)`` overriding ``config.auxiliary_fn``.

    Returns
    -------
    ChainResult
        Final archipelago, per-step telemetry and normalizing-constant estimate.
    """
    if config.mode == "fully_adapted_prediction":
        return run_fully_adapted(model, config, test_fns, workers)
    model.check_horizon(config.steps)
    t_fn = None
    if config.mode == "auxiliary":
        t_fn = resolve_auxiliary(model, auxiliary or config.auxiliary_fn)
    seed, m1 = config.seed, config.m1

    arch = _initial(model, config)
    telemetry = []
    for p in range(config.steps):
        try:
            scale = 1.0
            if t_fn is not None and p > 0:
                arch = boltzmann_weigh(arch, lambda x, p=p: t_fn(p, x))
                arch, scale = renormalize_island_weights(arch)
            cv = cv_criterion(arch.island_weights)
            triggered = False
            if p > 0:
                triggered = cv > config.tau
                if triggered:
                    arch = select_islands(arch, RngStream(seed, p, 0, Role.ISLAND_SELECTION))
                arch = select_individuals(
                    arch, island_streams(seed, p, Role.INDIVIDUAL_SELECTION, m1), workers
                )
            if t_fn is not None and p > 0:
                weight_fn = _auxiliary_weight_fn(model, t_fn, p)
                weight_sup = None
            else:
                weight_fn = lambda x, y, p=p: model.weight(p, x, y)
                weight_sup = model.weight_sup(p)
            arch = mutate(
                arch,
                lambda x, s, p=p: model.propose(p, x, s),
                weight_fn,
                island_streams(seed, p, Role.MUTATION, m1),
                weight_sup=weight_sup,
                workers=workers,
            )
            arch, s2 = renormalize_island_weights(arch)
        except DegeneracyError as exc:
            raise exc.stamped(step=p, seed=seed) from None
        telemetry.append(
            StepTelemetry(p + 1, cv, triggered, _estimates(arch, test_fns), scale * s2)
        )
    return ChainResult(arch, telemetry, normalizing_constant(telemetry))


def _auxiliary_weight_fn(model, t_fn, p):
    def weight(x, y):
        return model.weight(p, x, y) / np.asarray(t_fn(p, x), dtype=float)

    return weight


def run_fully_adapted(model, config, test_fns=None, workers=1):
    """Fully adapted double bootstrap targeting the prediction flow.

    Each step weighs particles by ``g_p``, selects islands and individuals, and
    moves them with ``M_p`` under unit importance weights, so every archipelago
    it outputs has island and particle weights exactly equal to one.
    """
    if config.mode != "fully_adapted_prediction":
        raise ConfigurationError("run_fully_adapted needs mode 'fully_adapted_prediction'")
    model.check_horizon(config.steps)
    seed, m1 = config.seed, config.m1
    arch = _initial(model, config)
    telemetry = []
    for p in range(config.steps):
        try:
            scale = 1.0
            cv = 0.0
            if p > 0:
                arch = boltzmann_weigh(
                    arch, lambda x, p=p: model.potential(p, x), model.potential_sup(p)
                )
                arch, scale = renormalize_island_weights(arch)
                cv = cv_criterion(arch.island_weights)
                arch = select_islands(arch, RngStream(seed, p, 0, Role.ISLAND_SELECTION))
                arch = select_individuals(
                    arch, island_streams(seed, p, Role.INDIVIDUAL_SELECTION, m1), workers
                )
            arch = mutate(
                arch,
                lambda x, s, p=p: model.transition(p, x, s),
                lambda x, y: np.ones(np.shape(y)[:1]),
                island_streams(seed, p, Role.MUTATION, m1),
                weight_sup=1.0,
                workers=workers,
            )
        except DegeneracyError as exc:
            raise exc.stamped(step=p, seed=seed) from None
        telemetry.append(StepTelemetry(p + 1, cv, p > 0, _estimates(arch, test_fns), scale))
    return ChainResult(arch, telemetry, normalizing_constant(telemetry))
