import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archipelago import DomainError, FiniteFK, closed_form_variance, exact_flow, mixing_bound
from archipelago.oracle import (
    OracleState,
    epsilon_sequence,
    island_selection_update,
    individual_selection_update,
    mixing_constants,
    propagate,
    recursive_variance,
    scheme_coefficients,
    variance_term,
)

from conftest import random_finite

H01 = np.array([0.0, 1.0])


class TestVarianceTerm:
    def test_constant_h(self, hmm):
        for l in range(5):
            assert variance_term(hmm, l, 5, np.full(2, 3.0)) == pytest.approx(0.0, abs=1e-15)

    def test_hand_terms(self, hand_model):
        assert [variance_term(hand_model, l, 2, H01) for l in range(2)] == [0.25, 0.25]

    def test_single_state(self):
        m = FiniteFK([1.0], [[1.0]], [2.0])
        assert variance_term(m, 0, 3, [4.0]) == 0.0

    def test_index_range(self, hmm):
        with pytest.raises(DomainError):
            variance_term(hmm, 5, 5, H01)


class TestClosedForm:
    def test_hand_values(self, hand_model):
        assert closed_form_variance(hand_model, 2, H01, "b2") == pytest.approx(0.75, abs=1e-12)
        assert closed_form_variance(hand_model, 2, H01, "sisr") == pytest.approx(0.5, abs=1e-12)
        assert closed_form_variance(hand_model, 0, H01, "b2") == pytest.approx(0.25, abs=1e-12)

    def test_details(self, hand_model):
        total, terms, coeff = closed_form_variance(hand_model, 3, H01, "b2", details=True)
        assert coeff.tolist() == [3.0, 2.0, 1.0]
        assert total == pytest.approx(coeff @ terms)

    def test_basil_needs_tau(self, hmm):
        with pytest.raises(DomainError):
            closed_form_variance(hmm, 2, H01, "basil")

    def test_unknown_scheme(self, hmm):
        with pytest.raises(DomainError):
            closed_form_variance(hmm, 2, H01, "xyz")

    def test_bad_h(self, hmm):
        with pytest.raises(DomainError):
            closed_form_variance(hmm, 2, [1.0, 2.0, 3.0])

    def test_stationary_sisr_permutation(self):
        P = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        m = FiniteFK(np.full(3, 1 / 3), P, np.ones(3))
        h = np.array([1.0, -2.0, 0.5])
        eta = np.full(3, 1 / 3)
        base = eta @ (h - eta @ h) ** 2
        for n in range(1, 8):
            assert np.allclose(exact_flow(m, n)[0][n], eta, atol=1e-15)
            assert closed_form_variance(m, n, h, "sisr") == pytest.approx(n * base, rel=1e-12)

    def test_stationary_sisr_mixing(self):
        # a mixing kernel contracts the older terms below eta{(h - eta h)^2}
        M = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
        m = FiniteFK(np.full(3, 1 / 3), M, np.ones(3))
        h = np.array([1.0, -2.0, 0.5])
        eta = np.full(3, 1 / 3)
        c = h - eta @ h
        for n in range(1, 8):
            expected = sum(
                eta @ (np.linalg.matrix_power(M, n - 1 - l) @ c) ** 2 for l in range(n)
            )
            assert closed_form_variance(m, n, h, "sisr") == pytest.approx(expected, rel=1e-12)
            assert expected < n * (eta @ c**2) or n == 1

    def test_single_step_general_proposal(self):
        m = random_finite(np.random.default_rng(11), proposal=True)
        h = np.array([0.3, -1.0, 2.0])
        eta, mass = exact_flow(m, 1)
        f = h - eta[1] @ h
        R, W = m.R_at(0), m.weight_matrix(0)
        expected = float(eta[0] @ (R * W**2) @ f**2) / mass[0] ** 2
        for tau in (0.0, 0.5, math.inf):
            assert closed_form_variance(m, 1, h, "basil", tau) == pytest.approx(expected, rel=1e-12)
            assert recursive_variance(m, 1, h, tau) == pytest.approx(expected, rel=1e-12)


class TestEpsilon:
    def test_extremes(self, hmm):
        assert epsilon_sequence(hmm, 5, 0).tolist() == [1] * 5
        assert epsilon_sequence(hmm, 5, math.inf).tolist() == [0] * 5

    def test_matches_reference_recursion(self, hmm):
        eta, mass = exact_flow(hmm, 5)
        for tau in (1e-9, 0.5, 3.0):
            mu1 = hmm.chi.copy()
            ref = []
            for p in range(5):
                e = int(mu1.sum() > tau + 1)
                ref.append(e)
                mu1 = eta[p + 1] if e else mu1 @ hmm.M_at(p) * hmm.g_next(p) / mass[p]
            assert epsilon_sequence(hmm, 5, tau).tolist() == ref

    def test_negative_tau(self, hmm):
        with pytest.raises(DomainError):
            epsilon_sequence(hmm, 3, -1.0)

    def test_coefficients(self):
        assert scheme_coefficients(4, "basil", eps=[1, 0, 1, 1]).tolist() == [3.0, 3.0, 2.0, 1.0]
        assert scheme_coefficients(3, "sisr").tolist() == [1.0, 1.0, 1.0]


class TestRecursive:
    def test_hand_values(self, hand_model):
        assert recursive_variance(hand_model, 2, H01, 0.0) == pytest.approx(0.75, abs=1e-12)
        assert recursive_variance(hand_model, 2, H01, math.inf) == pytest.approx(0.5, abs=1e-12)

    def test_constant_h(self, hmm):
        assert recursive_variance(hmm, 5, np.ones(2), 0.5) == pytest.approx(0.0, abs=1e-14)

    def test_single_updates(self):
        s = OracleState.initial([0.25, 0.75])
        assert s.variance(H01) == pytest.approx(0.1875)
        t = island_selection_update(s)
        assert t.variance(H01) == pytest.approx(2 * 0.1875)
        u = individual_selection_update(s)
        assert u.variance(H01) == pytest.approx(2 * 0.1875)
        assert np.array_equal(u.mu3, s.eta)

    @given(st.integers(0, 10**6), st.integers(1, 10), st.sampled_from([0.0, 0.7, math.inf]))
    @settings(max_examples=30, deadline=None)
    def test_state_invariants(self, seed, n, tau):
        m = random_finite(np.random.default_rng(seed), steps=n, proposal=seed % 2 == 0)
        state = propagate(m, n, tau)
        for A in (state.sigma, state.sigma1):
            assert np.allclose(A, A.T)
            assert np.linalg.eigvalsh(A).min() >= -1e-10 * max(1.0, np.abs(A).max())
        for mu in (state.mu1, state.mu2, state.mu3):
            assert np.all(mu >= 0)
        assert state.mu1.sum() == pytest.approx(1.0, rel=1e-10)


class TestOrdering:
    @given(st.integers(0, 10**6), st.integers(0, 12), st.floats(0.0, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_ordering(self, seed, n, tau):
        rng = np.random.default_rng(seed)
        m = random_finite(rng, d=int(rng.integers(2, 5)), steps=max(n, 1))
        h = rng.normal(size=m.d)
        b2 = closed_form_variance(m, n, h, "b2")
        basil = closed_form_variance(m, n, h, "basil", tau)
        sisr = closed_form_variance(m, n, h, "sisr")
        assert b2 >= basil >= sisr >= 0

    def test_extremes_exact(self, hmm):
        h = np.array([0.2, 1.5])
        for n in range(6):
            assert closed_form_variance(hmm, n, h, "basil", 0.0) == closed_form_variance(hmm, n, h, "b2")
            assert closed_form_variance(hmm, n, h, "basil", math.inf) == closed_form_variance(hmm, n, h, "sisr")


class TestMixingBound:
    def test_rho_half(self):
        # rho = 0.5: 1 / ((0.5)^2 (0.75)^2) = 7.111...
        assert mixing_bound(1.0, 0.5, 1.0, 1.0, 1.0) == pytest.approx(1 / (0.25 * 0.5625))

    def test_hand_value(self):
        assert mixing_bound(2.0, 0.5, 1.0, 0.5, 1.0) == pytest.approx(28.444444444444443, rel=1e-14)

    def test_zero_oscillation(self):
        assert mixing_bound(2.0, 0.3, 0.7, 0.5, 0.0) == 0.0

    @pytest.mark.parametrize("args", [(1, 0.7, 0.7, 1, 1), (1, 0, 1, 1, 1), (1, 0.3, 0.7, 0, 1), (-1, 0.3, 0.7, 1, 1)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            mixing_bound(*args)

    def test_constants(self):
        M = np.array([[0.3, 0.7], [0.6, 0.4]])
        m = FiniteFK([0.5, 0.5], M, [0.5, 1.0])
        w, lo, hi, c = mixing_constants(m, 3, phi=np.ones(2))
        assert (w, lo, hi) == (1.0, 0.3, 0.7)
        assert c == pytest.approx(min(M @ [0.5, 1.0]))
