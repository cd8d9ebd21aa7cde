"""Feynman-Kac models: the abstract interface, a finite-state engine with exact
recursions, and a linear Gaussian state-space model with its Kalman filter.

Step ``p`` of a model moves particles with a proposal kernel ``R_p`` and
reweights them by ``w_p(x, x')``, the density of the unnormalized kernel
``Q_p(x, .)`` against ``R_p(x, .)``. For the hidden-Markov specialization
``Q_p h(x) = M_p(g_{p+1} h)(x)`` with a Markov kernel ``M_p`` and a positive
potential ``g_{p+1}``.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DegeneracyError, DomainError

POTENTIAL_FLOOR = 1e-300
_ROW_TOL = 1e-12


class FeynmanKacModel(ABC):
    """Interface consumed by the particle algorithms.

    States of ``count`` particles are arrays with leading axis ``count``.
    """

    #: number of steps the model supports, or None when unbounded
    horizon: Optional[int] = None

    @abstractmethod
    def sample_initial(self, count, stream):
        """Draw ``count`` states from the initial law."""

    @abstractmethod
    def propose(self, p, states, stream):
        """Draw one state from ``R_p(x, .)`` for every row ``x`` of ``states``."""

    @abstractmethod
    def weight(self, p, x, x_new):
        """Importance weight ``w_p(x, x_new)``."""

    @abstractmethod
    def weight_sup(self, p):
        """Supremum of ``w_p``."""

    def potential(self, p, states):
        """Potential ``g_p`` (``p >= 1``) used by the prediction-flow algorithm."""
        raise NotImplementedError(f"{type(self).__name__} exposes no potentials")

    def potential_sup(self, p):
        return None

    def transition(self, p, states, stream):
        """Draw from the Markov kernel ``M_p``."""
        raise NotImplementedError(f"{type(self).__name__} exposes no Markov kernel")

    def auxiliary_weight(self, p, states):
        """Default first-stage weight ``t_p`` for the auxiliary algorithm."""
        raise NotImplementedError(f"{type(self).__name__} has no default auxiliary weight")

    def check_horizon(self, n):
        if n < 0:
            raise DomainError("horizon must be nonnegative")
        if self.horizon is not None and n > self.horizon:
            raise ConfigurationError(
                f"model supports at most {self.horizon} steps, {n} requested"
            )


def _as_stack(value, name, ndim):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == ndim - 1:
        arr = arr[None]
    if arr.ndim != ndim:
        raise ConfigurationError(f"{name} has {arr.ndim} dimensions, expected {ndim}")
    return arr


def _sample_rows(cdf_rows, u):
    # cdf_rows: (n, d) with last column exactly 1; u: (n,)
    return (cdf_rows <= u[:, None]).sum(axis=1)


def _cdf(rows):
    cdf = np.cumsum(rows, axis=-1)
    return cdf / cdf[..., -1:]


class FiniteFK(FeynmanKacModel):
    """Finite-state Feynman-Kac model.

    Parameters
    ----------
    chi : array_like, shape (d,)
        Initial law.
    M : array_like, shape (K, d, d) or (d, d)
        Markov kernels ``M_0, M_1, ...``; a single matrix is used at every step.
    g : array_like, shape (K, d) or (d,)
        Potentials; ``g[p]`` is ``g_{p+1}``, applied after the move by ``M_p``.
        A single vector is used at every step.
    proposal : array_like, optional
        Proposal kernels ``R_p`` with the layout of ``M``. Defaults to ``M``
        (bootstrap), in which case ``w_p(x, y) = g_{p+1}(y)``.
    emission : array_like, shape (d, K_obs), optional
        Observation probabilities used by :func:`simulate_observations`.
    """

    def __init__(self, chi, M, g, proposal=None, emission=None):
        self.chi = np.asarray(chi, dtype=float)
        self.M = _as_stack(M, "M", 3)
        self.g = np.maximum(_as_stack(g, "g", 2), 0.0)
        self.R = self.M if proposal is None else _as_stack(proposal, "proposal", 3)
        self.emission = None if emission is None else np.asarray(emission, dtype=float)
        self._validate()
        lengths = [len(a) for a in (self.M, self.g, self.R) if len(a) > 1]
        self.horizon = min(lengths) if lengths else None
        self._m_cdf = _cdf(self.M)
        self._r_cdf = self._m_cdf if proposal is None else _cdf(self.R)
        self._chi_cdf = _cdf(self.chi)

    def _validate(self):
        d = self.chi.shape[0] if self.chi.ndim == 1 else -1
        if d < 1:
            raise ConfigurationError("chi must be a nonempty vector")
        if np.any(self.chi < 0) or abs(self.chi.sum() - 1.0) > _ROW_TOL:
            raise ConfigurationError("chi must be a probability vector")
        for name, K in (("M", self.M), ("proposal", self.R)):
            if K.shape[1:] != (d, d):
                raise ConfigurationError(f"{name} matrices must be {d}x{d}")
            if np.any(K < 0) or np.any(np.abs(K.sum(axis=2) - 1.0) > _ROW_TOL):
                raise ConfigurationError(f"{name} rows must be probability vectors")
        if self.g.shape[1] != d:
            raise ConfigurationError(f"potentials must have length {d}")
        if not np.all(self.g > 0) or not np.all(np.isfinite(self.g)):
            raise ConfigurationError("potentials must be finite and strictly positive")
        if np.any((self.M > 0) & (self.R == 0)):
            raise ConfigurationError("M must be absolutely continuous w.r.t. the proposal")
        if self.emission is not None:
            e = self.emission
            if e.ndim != 2 or e.shape[0] != d or np.any(e < 0):
                raise ConfigurationError("emission must be a nonnegative d x K matrix")
            if np.any(np.abs(e.sum(axis=1) - 1.0) > _ROW_TOL):
                raise ConfigurationError("emission rows must be probability vectors")

    @classmethod
    def from_hmm(cls, chi, M, emission, observations):
        """Filtering model of a finite HMM given observations ``y_1, ..., y_n``.

        The potential ``g_p`` is the likelihood column ``emission[:, y_p]``
        floored at 1e-300.
        """
        emission = np.asarray(emission, dtype=float)
        y = np.asarray(observations, dtype=int)
        g = np.maximum(emission[:, y].T, POTENTIAL_FLOOR)
        return cls(chi, M, g, emission=emission)

    @property
    def d(self):
        return self.chi.shape[0]

    @property
    def bootstrap(self):
        return self.R is self.M

    @staticmethod
    def _at(stack, p):
        return stack[0] if len(stack) == 1 else stack[p]

    def M_at(self, p):
        return self._at(self.M, p)

    def R_at(self, p):
        return self._at(self.R, p)

    def g_next(self, p):
        """Potential ``g_{p+1}`` applied at step ``p``."""
        return self._at(self.g, p)

    def q_matrix(self, p):
        """Matrix of ``Q_p``: ``Q_p[x, y] = M_p[x, y] g_{p+1}[y]``."""
        return self.M_at(p) * self.g_next(p)[None, :]

    def weight_matrix(self, p):
        """Matrix of ``w_p(x, y)`` (zero where the proposal has no mass)."""
        R = self.R_at(p)
        Q = self.q_matrix(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(R > 0, Q / np.where(R > 0, R, 1.0), 0.0)

    def second_moment_matrix(self, p):
        """Matrix of ``h -> R_p(w_p^2 h)``."""
        return self.R_at(p) * self.weight_matrix(p) ** 2

    def sample_initial(self, count, stream):
        u = np.asarray(stream.random(count))
        return np.searchsorted(self._chi_cdf, u, side="right")

    def propose(self, p, states, stream):
        cdf = self._at(self._r_cdf, p)
        states = np.asarray(states)
        return _sample_rows(cdf[states], np.asarray(stream.random(states.shape[0])))

    def weight(self, p, x, x_new):
        if self.bootstrap:
            return self.g_next(p)[x_new]
        return self.weight_matrix(p)[x, x_new]

    def weight_sup(self, p):
        if self.bootstrap:
            return float(self.g_next(p).max())
        return float(self.weight_matrix(p).max())

    def transition(self, p, states, stream):
        cdf = self._at(self._m_cdf, p)
        states = np.asarray(states)
        return _sample_rows(cdf[states], np.asarray(stream.random(states.shape[0])))

    def potential(self, p, states):
        if p < 1:
            raise DomainError("potentials are indexed from 1")
        return self.g_next(p - 1)[states]

    def potential_sup(self, p):
        return float(self.g_next(p - 1).max())

    def auxiliary_weight(self, p, states):
        # proposal expectation of the importance weight, i.e. Q_p 1
        return self.q_matrix(p).sum(axis=1)[states]


@dataclass
class Lgssm(FeynmanKacModel):
    """Scalar linear Gaussian state-space model.

    ``x_0 ~ N(prior_mean, prior_var)``, ``x_{p+1} = a x_p + sigma_x e_p`` and
    ``y_p = x_p + sigma_y v_p``. The initial law of the Feynman-Kac flow is
    the filter at time 0 (the prior conditioned on ``y_0``) and ``g_p`` is the
    Gaussian likelihood of ``y_p``, so the flow at step ``n`` is the filter
    given ``y_0, ..., y_n``.
    """

    a: float
    sigma_x: float
    sigma_y: float
    prior_mean: float = 0.0
    prior_var: float = 1.0
    observations: tuple = ()

    def __post_init__(self):
        if not self.sigma_x >= 0:
            raise ConfigurationError("sigma_x must be nonnegative")
        if not self.sigma_y > 0:
            raise ConfigurationError("sigma_y must be positive")
        if not self.prior_var >= 0:
            raise ConfigurationError("prior_var must be nonnegative")
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim != 1 or self.observations.size == 0:
            raise ConfigurationError("at least one observation is required")

    @property
    def horizon(self):
        return self.observations.size - 1

    def _posterior0(self):
        return _conjugate_update(
            self.prior_mean, self.prior_var, self.observations[0], self.sigma_y**2
        )

    def likelihood(self, p, states):
        z = (self.observations[p] - np.asarray(states, dtype=float)) / self.sigma_y
        dens = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * self.sigma_y)
        return np.maximum(dens, POTENTIAL_FLOOR)

    def sample_initial(self, count, stream):
        m, v = self._posterior0()
        return m + math.sqrt(v) * np.asarray(stream.standard_normal(count))

    def transition(self, p, states, stream):
        states = np.asarray(states, dtype=float)
        return self.a * states + self.sigma_x * np.asarray(
            stream.standard_normal(states.shape[0])
        )

    def propose(self, p, states, stream):
        return self.transition(p, states, stream)

    def weight(self, p, x, x_new):
        return self.likelihood(p + 1, x_new)

    def weight_sup(self, p):
        return 1.0 / (math.sqrt(2.0 * math.pi) * self.sigma_y)

    def potential(self, p, states):
        if p < 1:
            raise DomainError("potentials are indexed from 1")
        return self.likelihood(p, states)

    def potential_sup(self, p):
        return self.weight_sup(p)

    def auxiliary_weight(self, p, states):
        # likelihood of y_{p+1} at the predicted mean a*x
        return self.likelihood(p + 1, self.a * np.asarray(states, dtype=float))


def _conjugate_update(mean, var, y, obs_var):
    if var == 0:
        return mean, 0.0
    post_var = 1.0 / (1.0 / var + 1.0 / obs_var)
    post_mean = post_var * (mean / var + y / obs_var)
    return post_mean, post_var


def apply_q(model, p, h):
    """Apply ``Q_p`` to a function given by its values: ``sum_y M_p(x, y) g_{p+1}(y) h(y)``."""
    h = np.asarray(h, dtype=float)
    if h.shape != (model.d,):
        raise DomainError(f"h must have length {model.d}")
    model.check_horizon(p + 1)
    return model.q_matrix(p) @ h


def exact_flow(model, n):
    """Normalized Feynman-Kac flow of a finite model.

    Returns
    -------
    eta : list of ndarray
        ``eta[0] = chi`` and ``eta[p+1]`` proportional to ``eta[p] Q_p``.
    step_mass : ndarray, shape (n,)
        Normalizers ``eta[p] Q_p 1``; their product is ``gamma_n 1``.
    """
    model.check_horizon(n)
    eta = [model.chi.copy()]
    mass = np.empty(n)
    for p in range(n):
        unnorm = eta[p] @ model.q_matrix(p)
        total = unnorm.sum()
        if not total > 0:
            raise DegeneracyError("flow annihilated all mass", step=p)
        mass[p] = total
        eta.append(unnorm / total)
    return eta, mass


def exact_prediction_flow(model, n):
    """Prediction flow ``eta~_{p+1} ~ eta~_p diag(g_p) M_p`` with ``g_0 = 1``."""
    model.check_horizon(n)
    eta = [model.chi.copy()]
    mass = np.empty(n)
    for p in range(n):
        weighted = eta[p] if p == 0 else eta[p] * model.g_next(p - 1)
        unnorm = weighted @ model.M_at(p)
        total = unnorm.sum()
        if not total > 0:
            raise DegeneracyError("flow annihilated all mass", step=p)
        mass[p] = total
        eta.append(unnorm / total)
    return eta, mass


def kalman_filter(model, n):
    """Exact filter of an :class:`Lgssm`.

    Returns a list of ``n + 1`` pairs ``(mean, variance)``, entry ``k`` being
    the law of ``x_k`` given ``y_0, ..., y_k``.
    """
    model.check_horizon(n)
    obs_var = model.sigma_y**2
    m, v = model._posterior0()
    out = [(m, v)]
    for k in range(1, n + 1):
        m_pred = model.a * m
        v_pred = model.a**2 * v + model.sigma_x**2
        m, v = _conjugate_update(m_pred, v_pred, model.observations[k], obs_var)
        out.append((m, v))
    return out


@dataclass
class SimulatedPath:
    latent: np.ndarray
    observations: np.ndarray


def simulate_observations(model, n, stream):
    """Simulate the data-generating process underlying ``model``.

    For an :class:`Lgssm` the latent path ``x_0..x_n`` starts from the prior and
    observations ``y_0..y_n`` are returned. For a :class:`FiniteFK` with an
    emission matrix the chain starts from ``chi`` and observations
    ``y_1..y_n`` (the ones defining ``g_1..g_n``) are returned.
    """
    if isinstance(model, Lgssm):
        state_noise = np.asarray(stream.standard_normal(n + 1), dtype=float)
        obs_noise = np.asarray(stream.standard_normal(n + 1), dtype=float)
        x = np.empty(n + 1)
        x[0] = model.prior_mean + math.sqrt(model.prior_var) * state_noise[0]
        for k in range(1, n + 1):
            x[k] = model.a * x[k - 1] + model.sigma_x * state_noise[k]
        return SimulatedPath(x, x + model.sigma_y * obs_noise)
    if isinstance(model, FiniteFK):
        if model.emission is None:
            raise ConfigurationError("simulation needs a model with an emission matrix")
        model.check_horizon(n)
        x = np.empty(n + 1, dtype=int)
        x[0] = model.sample_initial(1, stream)[0]
        y = np.empty(n, dtype=int)
        e_cdf = _cdf(model.emission)
        for k in range(1, n + 1):
            x[k] = model.transition(k - 1, x[k - 1 : k], stream)[0]
            y[k - 1] = _sample_rows(e_cdf[x[k : k + 1]], np.asarray(stream.random(1)))[0]
        return SimulatedPath(x, y)
    raise ConfigurationError(f"cannot simulate from {type(model).__name__}")


def model_from_dict(spec):
    """Build a model from its JSON description."""
    if not isinstance(spec, dict):
        raise ConfigurationError("model description must be an object")
    kind = spec.get("type")
    try:
        if kind == "finite":
            d = spec.get("d")
            chi = spec["chi"]
            if d is not None and len(chi) != d:
                raise ConfigurationError(f"chi has length {len(chi)}, d = {d}")
            if "g" in spec:
                return FiniteFK(chi, spec["M"], spec["g"], spec.get("proposal"),
                                spec.get("emission"))
            if "emission" in spec and "observations" in spec:
                return FiniteFK.from_hmm(chi, spec["M"], spec["emission"], spec["observations"])
            raise ConfigurationError("finite model needs 'g' or 'emission' + 'observations'")
        if kind == "lgssm":
            return Lgssm(
                a=float(spec["a"]),
                sigma_x=float(spec["sigma_x"]),
                sigma_y=float(spec["sigma_y"]),
                prior_mean=float(spec.get("prior_mean", 0.0)),
                prior_var=float(spec.get("prior_var", 1.0)),
                observations=spec["observations"],
            )
    except KeyError as exc:
        raise ConfigurationError(f"model description lacks field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid model description: {exc}") from None
    raise ConfigurationError(f"unknown model type {kind!r}")
