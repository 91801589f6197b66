import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqbwe.schedule import (
    NoiseSchedule,
    cumulative_transition,
    explicit_cumulative,
    linear_schedule,
    transition_matrix,
)


def two_step_schedule():
    # (alpha, beta, gamma) = (0.5, 0.1, 0.3) then (0.3, 0.1, 0.5)
    return NoiseSchedule(T=2, K=2, alpha=np.array([0.5, 0.3]),
                         beta=np.array([0.1, 0.1]), gamma=np.array([0.3, 0.5]))


def test_default_endpoints_total_reading():
    s = linear_schedule(100, 1024, 0.9, 0.1, beta_is_total=True)
    assert s.gamma[-1] == pytest.approx(0.9, abs=1e-15)
    assert s.K * s.beta[-1] == pytest.approx(0.1, abs=1e-15)
    assert s.alpha[-1] == pytest.approx(0.0, abs=1e-12)


def test_default_endpoints_literal_reading_rejected_for_large_k():
    with pytest.raises(ValueError, match="alpha_t negative"):
        linear_schedule(100, 1024, 0.9, 0.1)


def test_literal_endpoints_small_k():
    s = linear_schedule(100, 2, 0.5, 0.1)
    assert s.gamma[-1] == 0.5
    assert s.beta[-1] == pytest.approx(0.1)


def test_identity_schedule():
    s = linear_schedule(100, 4, 0.0, 0.0)
    for t in (1, 50, 100):
        np.testing.assert_array_equal(transition_matrix(s, t), np.eye(5))
        np.testing.assert_array_equal(cumulative_transition(s, t), np.eye(5))


def test_small_linear_values():
    s = linear_schedule(4, 2, 0.8, 0.05)
    np.testing.assert_allclose(s.gamma, [0.2, 0.4, 0.6, 0.8], atol=1e-15)
    np.testing.assert_allclose(s.beta, [0.0125, 0.025, 0.0375, 0.05], atol=1e-15)
    np.testing.assert_allclose(s.alpha, 1 - 2 * s.beta - s.gamma, atol=1e-15)
    assert s.gamma[0] > 0


def test_transition_matrix_example():
    s = NoiseSchedule(T=1, K=2, alpha=np.array([0.5]), beta=np.array([0.1]), gamma=np.array([0.3]))
    Q = transition_matrix(s, 1)
    np.testing.assert_allclose(Q[:, 0], [0.6, 0.1, 0.3], atol=1e-15)
    np.testing.assert_allclose(Q[:, 1], [0.1, 0.6, 0.3], atol=1e-15)
    np.testing.assert_array_equal(Q[:, 2], [0, 0, 1])
    np.testing.assert_allclose(Q.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("K", [2, 5, 17])
def test_mask_column_absorbing(K):
    s = linear_schedule(10, K, 0.9, 0.1, beta_is_total=True)
    for t in range(1, 11):
        e = np.zeros(K + 1)
        e[K] = 1
        np.testing.assert_array_equal(transition_matrix(s, t)[:, K], e)
        np.testing.assert_array_equal(cumulative_transition(s, t)[:, K], e)


def test_two_step_product_against_frozen_oracle():
    s = two_step_schedule()
    expected = np.array([[0.25, 0.10, 0.0],
                         [0.10, 0.25, 0.0],
                         [0.65, 0.65, 1.0]])
    np.testing.assert_allclose(explicit_cumulative(s, 2), expected, atol=1e-15)
    np.testing.assert_allclose(cumulative_transition(s, 2), expected, atol=1e-15)


def test_cumulative_first_step_is_single_step():
    s = linear_schedule(10, 3, 0.9, 0.1, beta_is_total=True)
    np.testing.assert_array_equal(cumulative_transition(s, 1), transition_matrix(s, 1))


def test_absorption_dominates_at_T():
    s = linear_schedule(100, 4, 0.9, 0.1, beta_is_total=True)
    Qbar = explicit_cumulative(s, 100)
    assert np.all(Qbar[4, :4] >= 0.9)


@pytest.mark.parametrize("t", [0, 11, -1])
def test_out_of_range(t):
    s = linear_schedule(10, 3, 0.5, 0.1)
    with pytest.raises(ValueError):
        transition_matrix(s, t)
    with pytest.raises(ValueError):
        cumulative_transition(s, t)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        linear_schedule(0, 3, 0.5, 0.1)
    with pytest.raises(ValueError):
        linear_schedule(10, 1, 0.5, 0.1)
    with pytest.raises(ValueError):
        linear_schedule(10, 4, 0.9, 0.05)


@settings(max_examples=40, deadline=None)
@given(K=st.sampled_from([2, 4, 8]), T=st.integers(1, 100),
       gmax=st.floats(0, 0.95), btot=st.floats(0, 1))
def test_closed_form_matches_product(K, T, gmax, btot):
    btot = btot * (1 - gmax)
    s = linear_schedule(T, K, gmax, btot, beta_is_total=True)
    prev_mask = 0.0
    P = np.eye(K + 1)
    for t in range(1, T + 1):
        P = transition_matrix(s, t) @ P
        C = cumulative_transition(s, t)
        assert np.max(np.abs(C - P)) <= 1e-10
        np.testing.assert_allclose(C.sum(axis=0), 1.0, atol=1e-12)
        assert C.min() >= 0
        assert C[K, 0] >= prev_mask - 1e-15
        prev_mask = C[K, 0]
