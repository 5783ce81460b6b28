import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from generating_functions import (C_eval, ConvergenceError, DomainError, Model, ModelParams,
                                  NoSolutionError, P_inverse, P_map, Q_eval, Q_inverse,
                                  Q_inverse_array, R_inverse, R_jacobian, R_map, ThresholdLabError,
                                  p_coefficients, p_eval, p_i_closed, q_eval, r_coeff, r_eval,
                                  ratio_LKM)


def test_q_and_derivatives():
    assert q_eval(0.0) == 0.0
    assert q_eval(1.0) == pytest.approx(math.e - 2.0)
    assert q_eval(2.0, derivative=1) == pytest.approx(math.expm1(2.0))
    assert q_eval(2.0, derivative=2) == pytest.approx(math.exp(2.0))
    with pytest.raises(DomainError):
        q_eval(-0.1)


def test_q_series_branch_is_continuous():
    x = np.array([0.99e-4, 1.01e-4])
    exact = np.array([math.expm1(v) - v for v in x])
    assert np.allclose(q_eval(x), exact, rtol=1e-9)


@given(st.floats(min_value=1e-3, max_value=30.0))
def test_Q_exceeds_two_and_x(x):
    value = Q_eval(x)
    assert value > 2.0
    assert value > x


@given(st.floats(min_value=2.01, max_value=250.0))
def test_Q_inverse_round_trip(t):
    assert Q_eval(Q_inverse(t)) == pytest.approx(t, rel=1e-11)


def test_Q_inverse_array_matches_scalar():
    t = np.array([2.5, 4.0, 13.5, 60.0])
    assert np.allclose(Q_inverse_array(t), [Q_inverse(v) for v in t], rtol=1e-10)


@pytest.mark.parametrize('t', [2.0, 1.5, -3.0])
def test_Q_inverse_needs_t_above_two(t):
    with pytest.raises(NoSolutionError):
        Q_inverse(t)


def test_error_hierarchy():
    assert issubclass(NoSolutionError, DomainError)
    assert issubclass(DomainError, ValueError)
    assert issubclass(ConvergenceError, ThresholdLabError)


def test_C_limits():
    assert C_eval(1e-5) == pytest.approx(1e-5 / 12, rel=1e-6)
    assert 50.0 * C_eval(50.0) == pytest.approx(1.0, rel=0.05)
    assert np.all(np.asarray(C_eval(np.linspace(0.01, 40.0, 200))) > 0)


@pytest.mark.parametrize('k', range(1, 13))
def test_r_coefficients_sum_to_r_at_ones(k):
    total = sum(r_coeff(k1, k2, k) for k1 in range(k + 1) for k2 in range(k + 1 - k1))
    assert total == 3**(k - 1)
    assert r_eval(1.0, 1.0, 1.0, k) == pytest.approx(3.0**(k - 1))


@pytest.mark.parametrize('k1, k2, k', [(1, 0, 3), (2, 0, 5), (0, 1, 4)])
def test_r_coeff_filters_by_residue(k1, k2, k):
    assert r_coeff(k1, k2, k) == 0


def test_r_coeff_trinomial():
    assert r_coeff(1, 1, 3) == 6
    assert r_coeff(3, 0, 3) == 1


@pytest.mark.parametrize('d', [2, 3, 4, 5])
@pytest.mark.parametrize('k', range(1, 13))
def test_column_polynomial_identity_is_exact(k, d):
    for z in (Fraction(1, 3), Fraction(2), Fraction(-5, 7)):
        series = sum(c * z**i for i, c in enumerate(p_coefficients(k, d)))
        closed = ((1 + z)**k + (d - 1) * (1 - z / (d - 1))**k) / d
        assert series == closed


def test_p_eval_matches_coefficients():
    z = 0.37
    series = sum(float(c) * z**i for i, c in enumerate(p_coefficients(6, 4)))
    assert p_eval(z, 6, 4) == pytest.approx(series, rel=1e-12)
    assert p_i_closed(0, 4) == 1
    assert p_i_closed(1, 4) == 0


@given(st.floats(min_value=0.05, max_value=2.9))
def test_P_inverse_round_trip(t):
    c = P_inverse(t, 3, 4)
    assert P_map(c, 3, 4) == pytest.approx(t, rel=1e-9)


@pytest.mark.parametrize('k', [3, 6, 15])
def test_R_inverse_at_center(k):
    assert np.allclose(R_map(1.0, 1.0, k), (k / 3.0, k / 3.0))
    assert np.allclose(R_inverse(k / 3.0, k / 3.0, k), (1.0, 1.0), atol=1e-9)


def test_R_inverse_round_trip_off_center():
    k = 9
    c1, c2 = R_inverse(3.2, 2.9, k)
    assert np.allclose(R_map(c1, c2, k), (3.2, 2.9), atol=1e-9)


def test_R_jacobian_matches_differences():
    k, x1, x2, h = 6, 1.3, 0.8, 1e-6
    jac = R_jacobian(x1, x2, k)
    d1 = (np.array(R_map(x1 + h, x2, k)) - np.array(R_map(x1 - h, x2, k))) / (2 * h)
    d2 = (np.array(R_map(x1, x2 + h, k)) - np.array(R_map(x1, x2 - h, k))) / (2 * h)
    assert np.allclose(jac, np.column_stack([d1, d2]), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize('k', [3, 6, 15])
def test_R_jacobian_at_center_is_a_covariance(k):
    jac = R_jacobian(1.0, 1.0, k, log_coords=True)
    assert np.allclose(jac, jac.T)
    assert np.linalg.det(jac) == pytest.approx(k**2 / 27, rel=1e-9)


def test_R_inverse_rejects_far_targets():
    with pytest.raises(DomainError):
        R_inverse(0.1, 0.1, 9)


@given(st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.5, max_value=30.0))
def test_ratio_ordering(a, s):
    L, K, M = ratio_LKM(a, s)
    assert a * K <= L * (1 + 1e-9) + 1e-300
    assert L <= K * (1 + 1e-9)
    assert K <= M * (1 + 1e-9)


def test_model_params_scale():
    params = ModelParams.from_scale('mod3', 16, 15.0)
    assert params.model is Model.MOD3
    assert params.d == 3
    assert params.s == pytest.approx(15.0, rel=1e-9)
    assert params.Q == pytest.approx(Q_eval(15.0))


@pytest.mark.parametrize('k, gamma', [(2, 0.5), (3, 1.2), (3, 0.5), (3, -0.1)])
def test_model_params_rejects_bad_input(k, gamma):
    with pytest.raises(DomainError):
        ModelParams('mod2', k, gamma)


def test_simulation_params_skip_the_scale():
    params = ModelParams('ue', 3, 1.4, derive_scale=False)
    assert params.d == 4
    assert math.isnan(params.s)
