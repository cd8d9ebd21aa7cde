"""Weighted archipelagos and the primitive operations acting on them.

An archipelago is an array of ``m1`` islands, each holding ``m2`` weighted
particles and carrying its own island weight. Three operations evolve it:

* :func:`select_islands` -- multinomial selection on the island level (SIL),
* :func:`select_individuals` -- multinomial selection within islands (SiL),
* :func:`mutate` -- importance-sampling move of every particle.

All operations are pure: they return a new :class:`Archipelago` and leave the
input untouched. Per-island work can be spread over threads with ``workers``;
since each island owns its random stream the output does not depend on it.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DomainError, EvaluationError


@dataclass(frozen=True, eq=False)
class Archipelago:
    """Islands of weighted particles.

    Attributes
    ----------
    states : ndarray, shape (m1, m2, ...)
        Particle positions; trailing axes hold the state of one particle.
    particle_weights : ndarray, shape (m1, m2)
        Nonnegative particle weights.
    island_weights : ndarray, shape (m1,)
        Positive island weights.
    weight_bound : float
        Tracked uniform bound on the particle weights.
    """

    states: np.ndarray
    particle_weights: np.ndarray
    island_weights: np.ndarray
    weight_bound: float = 1.0

    def __post_init__(self):
        states = np.asarray(self.states)
        pw = np.asarray(self.particle_weights, dtype=float)
        iw = np.asarray(self.island_weights, dtype=float)
        if states.ndim < 2:
            raise DomainError("states must have shape (m1, m2, ...)")
        m1, m2 = states.shape[:2]
        if m1 < 1 or m2 < 1:
            raise DomainError("an archipelago needs at least one island and one particle")
        if pw.shape != (m1, m2):
            raise DomainError(f"particle_weights has shape {pw.shape}, expected {(m1, m2)}")
        if iw.shape != (m1,):
            raise DomainError(f"island_weights has shape {iw.shape}, expected {(m1,)}")
        if not (np.all(np.isfinite(iw)) and np.all(iw > 0)):
            raise DomainError("island weights must be finite and strictly positive")
        if not (np.all(np.isfinite(pw)) and np.all(pw >= 0)):
            raise DomainError("particle weights must be finite and nonnegative")
        bad = np.flatnonzero(pw.sum(axis=1) <= 0)
        if bad.size:
            raise DegeneracyError("zero particle-weight sum", island=int(bad[0]))
        if not self.weight_bound > 0:
            raise DomainError("weight_bound must be positive")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "particle_weights", pw)
        object.__setattr__(self, "island_weights", iw)
        object.__setattr__(self, "weight_bound", float(self.weight_bound))

    @classmethod
    def uniform(cls, states):
        """Archipelago with unit island and particle weights."""
        states = np.asarray(states)
        m1, m2 = states.shape[:2]
        return cls(states, np.ones((m1, m2)), np.ones(m1), 1.0)

    @property
    def m1(self):
        return self.states.shape[0]

    @property
    def m2(self):
        return self.states.shape[1]

    @property
    def size(self):
        return self.m1 * self.m2

    def island_estimates(self, h):
        """Self-normalized importance sampling estimate of ``h`` on each island."""
        values = _evaluate(h, self.states, self.particle_weights.shape)
        pw = self.particle_weights
        return (pw * values).sum(axis=1) / pw.sum(axis=1)


def _evaluate(h, states, shape):
    values = np.asarray(h(states), dtype=float)
    if values.shape != shape:
        values = np.broadcast_to(values, shape)
    if not np.all(np.isfinite(values)):
        raise EvaluationError("test function returned a non-finite value")
    return values


def _map_islands(fn, m1, workers):
    if workers is None or workers <= 1 or m1 == 1:
        return [fn(i) for i in range(m1)]
    with ThreadPoolExecutor(max_workers=min(workers, m1)) as pool:
        return list(pool.map(fn, range(m1)))


def _check_weights(weights):
    a = np.asarray(weights, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise DomainError("weights must be a nonempty one-dimensional sequence")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError("weights must be finite and strictly positive")
    return a


def cv_criterion(weights):
    """Coefficient of variation ``M * sum((a / sum a)**2) - 1`` of island weights.

    Equal weights give exactly 0; the result is clamped to ``[0, M - 1]``.
    """
    a = _check_weights(weights)
    m = a.size
    if np.all(a == a[0]):
        return 0.0
    p = a / a.sum()
    cv = m * float(np.dot(p, p)) - 1.0
    return min(max(cv, 0.0), m - 1.0)


def ess(weights):
    """Effective sample size ``M / (1 + CV)``."""
    a = _check_weights(weights)
    return a.size / (1.0 + cv_criterion(a))


def weighted_estimate(arch, h):
    """Island-weighted average of the per-island self-normalized estimates of ``h``."""
    local = arch.island_estimates(h)
    omega = arch.island_weights
    return float(np.dot(omega, local) / omega.sum())


def multinomial_draw(weights, count, stream):
    """Draw ``count`` i.i.d. indices with probabilities proportional to ``weights``.

    Uses the inverse of the cumulative distribution against the uniforms
    ``stream.random(count)``. Indices are zero-based; zero-weight categories are
    never returned.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DomainError("weights must be a nonempty one-dimensional sequence")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and nonnegative")
    if count < 1:
        raise DomainError("count must be positive")
    cdf = np.cumsum(w)
    total = cdf[-1]
    if not total > 0:
        raise DomainError("weights have zero total mass")
    cdf /= total
    u = np.asarray(stream.random(count), dtype=float)
    return np.searchsorted(cdf, u, side="right")


def select_islands(arch, stream):
    """Multinomial selection on the island level.

    Returns an archipelago whose island ``i`` is a verbatim copy of input island
    ``I_i``, with ``I_1, ..., I_m1`` drawn i.i.d. proportionally to the island
    weights, and all island weights set to one.
    """
    idx = multinomial_draw(arch.island_weights, arch.m1, stream)
    return Archipelago(
        arch.states[idx],
        arch.particle_weights[idx],
        np.ones(arch.m1),
        arch.weight_bound,
    )


def select_individuals(arch, streams, workers=1):
    """Multinomial resampling of the particles within every island.

    ``streams[i]`` drives island ``i``. Island weights are kept; all particle
    weights become one.
    """
    if len(streams) != arch.m1:
        raise DomainError(f"need {arch.m1} streams, got {len(streams)}")
    m2 = arch.m2

    def one(i):
        w = arch.particle_weights[i]
        if not w.sum() > 0:
            raise DegeneracyError("zero particle-weight sum", island=i)
        return arch.states[i][multinomial_draw(w, m2, streams[i])]

    states = np.stack(_map_islands(one, arch.m1, workers))
    return Archipelago(states, np.ones((arch.m1, m2)), arch.island_weights.copy(), 1.0)


def mutate(arch, proposal, weight_fn, streams, weight_sup=None, workers=1):
    """Importance-sampling move of every particle.

    Parameters
    ----------
    arch : Archipelago
    proposal : callable
        ``proposal(states, stream)`` draws one new state per row of ``states``
        (the particles of one island) from the proposal kernel.
    weight_fn : callable
        ``weight_fn(x, x_new)`` returns the nonnegative importance weights.
    streams : sequence of RngStream
        One stream per island, consumed in particle order.
    weight_sup : float, optional
        Known supremum of ``weight_fn``; the tracked bound is multiplied by it.
        When omitted the largest realized weight is used instead.
    workers : int

    Returns
    -------
    Archipelago
        New particles with weights ``w(x, x_new) * omega`` and island weights
        rescaled by the ratio of new to old particle-weight sums.
    """
    if len(streams) != arch.m1:
        raise DomainError(f"need {arch.m1} streams, got {len(streams)}")

    def one(i):
        x = arch.states[i]
        x_new = np.asarray(proposal(x, streams[i]))
        w = np.asarray(weight_fn(x, x_new), dtype=float)
        if w.shape != (arch.m2,):
            w = np.broadcast_to(w, (arch.m2,))
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise EvaluationError(f"invalid importance weight on island {i}")
        return x_new, w

    results = _map_islands(one, arch.m1, workers)
    states = np.stack([r[0] for r in results])
    w = np.stack([r[1] for r in results])
    if weight_sup is None:
        weight_sup = float(w.max())
    return _reweigh(arch, states, w, weight_sup)


def _reweigh(arch, states, w, weight_sup):
    new_pw = w * arch.particle_weights
    new_sums = new_pw.sum(axis=1)
    bad = np.flatnonzero(~(new_sums > 0))
    if bad.size:
        raise DegeneracyError("zero particle-weight sum after reweighting", island=int(bad[0]))
    old_sums = arch.particle_weights.sum(axis=1)
    iw = arch.island_weights * (new_sums / old_sums)
    if not np.all(np.isfinite(iw)) or np.any(iw <= 0):
        raise EvaluationError("island weight overflow or underflow; renormalize more often")
    return Archipelago(states, new_pw, iw, arch.weight_bound * weight_sup)


def boltzmann_weigh(arch, potential, potential_sup=None):
    """Multiply particle weights by ``potential(state)`` without moving particles.

    Equivalent to :func:`mutate` with the identity proposal and weight function
    ``w(x, x') = potential(x')``.
    """
    g = np.asarray(potential(arch.states), dtype=float)
    if g.shape != arch.particle_weights.shape:
        g = np.broadcast_to(g, arch.particle_weights.shape)
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise EvaluationError("potential returned a negative or non-finite value")
    if potential_sup is None:
        potential_sup = float(g.max())
    return _reweigh(arch, arch.states, g, potential_sup)


def renormalize_island_weights(arch):
    """Divide island weights by their mean.

    Returns
    -------
    (Archipelago, float)
        The rescaled archipelago and the discarded scale factor (the mean).
    """
    scale = float(arch.island_weights.mean())
    iw = arch.island_weights / scale
    return (
        Archipelago(arch.states, arch.particle_weights, iw, arch.weight_bound),
        scale,
    )
