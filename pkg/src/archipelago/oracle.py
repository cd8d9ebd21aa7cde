"""Exact asymptotic variances of the island algorithms on finite-state models.

Two independent routes are provided:

* :func:`closed_form_variance` sums explicit per-step terms weighted by a
  scheme-dependent coefficient (``n - l`` for B2, ``1`` for SISR, ``1 + sum of
  selection indicators`` for the adaptive scheme);
* :func:`recursive_variance` propagates the full limit state (two quadratic
  forms and three measures) through the single-operation updates of island
  selection, individual selection and mutation.

Functions are represented by their value vectors, measures by weight vectors
and variance functionals by symmetric matrices ``A`` with ``sigma(h) = h' A h``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .feynman_kac import exact_flow

SCHEMES = ("b2", "sisr", "basil")


def _check_h(model, h):
    h = np.asarray(h, dtype=float)
    if h.shape != (model.d,):
        raise DomainError(f"h must have length {model.d}")
    return h


def _centering(eta):
    d = eta.shape[0]
    return np.eye(d) - np.outer(np.ones(d), eta)


def variance_term(model, l, n, h, _flow=None):
    """Contribution of step ``l`` to the variance at horizon ``n``.

    Computes ``eta_l R_l{w_l^2 f^2} / (eta_l Q_l ... Q_{n-1} 1)^2`` with
    ``f = Q_{l+1} ... Q_{n-1} (h - eta_n h)``; the square is taken after the
    kernel products.
    """
    if not 0 <= l < n:
        raise DomainError(f"step index {l} outside [0, {n})")
    h = _check_h(model, h)
    eta, _ = _flow if _flow is not None else exact_flow(model, n)
    f = h - eta[n] @ h
    one = np.ones(model.d)
    for k in range(n - 1, l, -1):
        Q = model.q_matrix(k)
        f = Q @ f
        one = Q @ one
    one = model.q_matrix(l) @ one
    num = eta[l] @ (model.second_moment_matrix(l) @ (f * f))
    den = eta[l] @ one
    return float(num / den**2)


def epsilon_sequence(model, n, tau):
    """Asymptotic island-selection indicators ``eps_0, ..., eps_{n-1}``.

    ``eps_p = 1{mu1_p 1 > tau + 1}`` with ``mu1`` propagated by
    ``mu1_{p+1} h = (1 - eps_p) mu1_p Q_p h / eta_p Q_p 1 + eps_p eta_{p+1} h``
    from ``mu1_0 = eta_0``. ``tau = 0`` is systematic selection (all ones).
    ``eps_0`` is reported for completeness only: no selection precedes the
    first mutation.
    """
    if tau < 0 or math.isnan(tau):
        raise DomainError("tau must be nonnegative")
    if tau == 0:
        return np.ones(n, dtype=int)
    if math.isinf(tau):
        return np.zeros(n, dtype=int)
    eta, mass = exact_flow(model, n)
    mu1 = eta[0].copy()
    eps = np.zeros(n, dtype=int)
    for p in range(n):
        eps[p] = int(mu1.sum() > tau + 1.0)
        if eps[p]:
            mu1 = eta[p + 1].copy()
        else:
            mu1 = (mu1 @ model.q_matrix(p)) / mass[p]
    return eps


def scheme_coefficients(n, scheme, tau=None, eps=None):
    """Weights of the per-step variance terms for ``scheme``."""
    ell = np.arange(n)
    if scheme == "b2":
        return (n - ell).astype(float)
    if scheme == "sisr":
        return np.ones(n)
    if scheme == "basil":
        if eps is None:
            raise DomainError("basil coefficients need the epsilon sequence")
        eps = np.asarray(eps, dtype=float)
        tail = np.concatenate([np.cumsum(eps[::-1])[::-1], [0.0]])
        # 1 + sum_{p=l+1}^{n-1} eps_p
        return 1.0 + tail[ell + 1]
    raise DomainError(f"unknown scheme {scheme!r}")


def closed_form_variance(model, n, h, scheme="b2", tau=None, details=False):
    """Asymptotic variance at horizon ``n`` as an explicit weighted sum.

    Parameters
    ----------
    model : FiniteFK
    n : int
    h : array_like, shape (d,)
    scheme : {"b2", "sisr", "basil"}
    tau : float
        Threshold of the adaptive scheme (required for ``"basil"``).
    details : bool
        Also return the per-step terms and coefficients.
    """
    h = _check_h(model, h)
    if n < 0:
        raise DomainError("horizon must be nonnegative")
    if scheme == "basil" and tau is None:
        raise DomainError("scheme 'basil' needs tau")
    if n == 0:
        c = h - model.chi @ h
        total = float(model.chi @ (c * c))
        if details:
            return total, np.zeros(0), np.zeros(0)
        return total
    flow = exact_flow(model, n)
    terms = np.array([variance_term(model, l, n, h, _flow=flow) for l in range(n)])
    eps = epsilon_sequence(model, n, tau) if scheme == "basil" else None
    coeff = scheme_coefficients(n, scheme, tau, eps)
    total = float(coeff @ terms)
    if details:
        return total, terms, coeff
    return total


@dataclass
class OracleState:
    """Limit objects of an archipelago on a finite state space.

    ``sigma`` and ``sigma1`` are symmetric matrices of the variance functionals
    (centering included); ``mu1``, ``mu2``, ``mu3`` are nonnegative vectors.
    """

    eta: np.ndarray
    sigma: np.ndarray
    sigma1: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    mu3: np.ndarray
    epsilon_history: list = field(default_factory=list)

    @classmethod
    def initial(cls, chi):
        """State of ``m1 x m2`` i.i.d. draws from ``chi`` with unit weights."""
        chi = np.asarray(chi, dtype=float)
        P = _centering(chi)
        A = P.T @ np.diag(chi) @ P
        return cls(chi.copy(), A, A.copy(), chi.copy(), chi.copy(), chi.copy())

    def variance(self, h):
        h = np.asarray(h, dtype=float)
        return float(h @ self.sigma @ h)


def _sym(A):
    return 0.5 * (A + A.T)


def island_selection_update(state):
    """Island-level selection: ``sigma += sigma1``, ``(mu1, mu2) <- (eta, mu3)``."""
    return OracleState(
        state.eta,
        _sym(state.sigma + state.sigma1),
        state.sigma1,
        state.eta.copy(),
        state.mu3.copy(),
        state.mu3.copy(),
        list(state.epsilon_history),
    )


def individual_selection_update(state):
    """Individual-level selection.

    ``sigma += mu1{(h - eta h)^2}``, ``sigma1 += eta{(h - eta h)^2}`` and
    ``(mu1, mu2, mu3) <- (mu1, mu1, eta)``.
    """
    P = _centering(state.eta)
    return OracleState(
        state.eta,
        _sym(state.sigma + P.T @ np.diag(state.mu1) @ P),
        _sym(state.sigma1 + P.T @ np.diag(state.eta) @ P),
        state.mu1.copy(),
        state.mu1.copy(),
        state.eta.copy(),
        list(state.epsilon_history),
    )


def mutation_update(state, Q, S):
    """Mutation through kernel ``Q`` with second-moment matrix ``S = R * w**2``."""
    c = float(state.eta @ Q.sum(axis=1))
    eta_new = (state.eta @ Q) / c
    P = _centering(eta_new)

    def conj(A, mu):
        inner = Q.T @ A @ Q + np.diag(mu @ S) - Q.T @ np.diag(mu) @ Q
        return _sym(P.T @ inner @ P) / c**2

    return OracleState(
        eta_new,
        conj(state.sigma, state.mu2),
        conj(state.sigma1, state.mu3),
        (state.mu1 @ Q) / c,
        (state.mu2 @ S) / c**2,
        (state.mu3 @ S) / c**2,
        list(state.epsilon_history),
    )


def propagate(model, n, tau):
    """Run the limit state through ``n`` iterations of the adaptive algorithm."""
    if n < 0:
        raise DomainError("horizon must be nonnegative")
    model.check_horizon(n)
    state = OracleState.initial(model.chi)
    for p in range(n):
        if p > 0:
            if tau == 0:
                eps = 1
            elif math.isinf(tau):
                eps = 0
            else:
                eps = int(state.mu1.sum() > tau + 1.0)
            state.epsilon_history.append(eps)
            if eps:
                state = island_selection_update(state)
            state = individual_selection_update(state)
        state = mutation_update(state, model.q_matrix(p), model.second_moment_matrix(p))
    return state


def recursive_variance(model, n, h, tau):
    """Asymptotic variance at horizon ``n`` by step-by-step propagation."""
    h = _check_h(model, h)
    if tau < 0 or math.isnan(tau):
        raise DomainError("tau must be nonnegative")
    return propagate(model, n, tau).variance(h)


def mixing_bound(w_plus, sigma_minus, sigma_plus, c_minus, osc_h):
    """Time-uniform bound on the B2 variance under strong mixing.

    ``w_plus * osc_h**2 / ((1 - rho)**2 (1 - rho**2)**2 c_minus)`` with
    ``rho = 1 - sigma_minus / sigma_plus``.
    """
    if not 0 < sigma_minus < sigma_plus:
        raise DomainError("need 0 < sigma_minus < sigma_plus")
    if not c_minus > 0:
        raise DomainError("c_minus must be positive")
    if w_plus < 0 or osc_h < 0:
        raise DomainError("w_plus and osc_h must be nonnegative")
    rho = 1.0 - sigma_minus / sigma_plus
    return w_plus * osc_h**2 / ((1 - rho) ** 2 * (1 - rho**2) ** 2 * c_minus)


def mixing_constants(model, n, phi=None):
    """Tightest strong-mixing constants of a finite model over steps ``0..n-1``.

    Returns ``(w_plus, sigma_minus, sigma_plus, c_minus)`` where
    ``sigma_minus phi <= M_p(x, .) <= sigma_plus phi`` entrywise (``phi``
    uniform by default), ``w_plus`` bounds the importance weights and
    ``c_minus`` bounds ``Q_p 1`` from below.
    """
    steps = range(max(n, 1))
    d = model.d
    phi = np.full(d, 1.0 / d) if phi is None else np.asarray(phi, dtype=float)
    ratios = np.stack([model.M_at(p) / phi[None, :] for p in steps])
    w_plus = max(float(model.weight_matrix(p).max()) for p in steps)
    c_minus = min(float(model.q_matrix(p).sum(axis=1).min()) for p in steps)
    return w_plus, float(ratios.min()), float(ratios.max()), c_minus
