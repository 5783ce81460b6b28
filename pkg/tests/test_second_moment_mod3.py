import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from generating_functions import DomainError, Model, ModelParams, UnsupportedError
from lab_reports import GridSpec
from second_moment_mod3 import Mod3SecondMoment, log_psi_mod3, opt_mod3

COARSE = GridSpec(256, 256)


@pytest.mark.parametrize('s', [3.0, 8.0, 15.0, 40.0])
def test_opt_touches_three_at_the_corners(s):
    assert opt_mod3((1, 1, 1), (1, 1, 1), s) == pytest.approx(3.0, rel=1e-12)
    assert opt_mod3((1, 0, 0), (1, 0, 0), s) == pytest.approx(3.0, rel=1e-12)


def test_opt_components_multiply():
    value, (opt1, opt2, opt3) = opt_mod3((1.0, 0.4, 0.3), (1.0, 0.2, 0.1), 9.0, components=True)
    assert value == pytest.approx(opt1 * opt2 * opt3, rel=1e-12)


@given(st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=0.01, max_value=1.0), st.floats(min_value=0.0, max_value=1.0))
def test_opt_is_symmetric_in_the_nonzero_classes(a1, a2, c1, c2):
    one = opt_mod3((1.0, a1, a2), (1.0, c1, c2), 8.0)
    two = opt_mod3((1.0, a2, a1), (1.0, c2, c1), 8.0)
    assert one == pytest.approx(two, rel=1e-10)


def test_opt_rejects_negative_parameters():
    with pytest.raises(DomainError):
        opt_mod3((1.0, -0.1, 0.0), (1.0, 0.0, 0.0), 8.0)


def test_log_psi_at_the_center(mod3_params):
    third = (1 / 3, 1 / 3, 1 / 3)
    s = mod3_params.s
    value = log_psi_mod3(third, third, (s, s, s), (1.0, 1.0, 1.0), mod3_params)
    assert value == pytest.approx((1 - mod3_params.gamma) * math.log(3.0), abs=1e-9)


def test_log_psi_requires_probability_vectors(mod3_params):
    with pytest.raises(DomainError):
        log_psi_mod3((0.5, 0.5, 0.5), (1 / 3,) * 3, (1.0,) * 3, (1.0,) * 3, mod3_params)


def test_stationary_point_at_the_center(mod3):
    point = mod3.stationary_params((1 / 3,) * 3, (1 / 3,) * 3)
    assert np.allclose(point.a, mod3.params.s, rtol=1e-9)
    assert np.allclose(point.c, 1.0, atol=1e-8)


def test_analysis_needs_the_mod3_model():
    with pytest.raises(DomainError):
        Mod3SecondMoment(ModelParams(Model.UE, 9, 0.9))


@pytest.mark.parametrize('lemma_id, s', [('lem1', 8.0), ('lem2', 7.0), ('lem3', 7.0),
                                         ('lem4', 15.0)])
def test_lemmas_hold_at_their_floor(mod3, lemma_id, s):
    report = mod3.verify_lemma(lemma_id, s, COARSE)
    assert report.passed, report.violations[:3] + [c for c in report.checks if not c['passed']]
    assert report.margin > 0
    assert report.summary()['message'].startswith('✓')


def test_lemma_below_its_floor_is_flagged(mod3):
    report = mod3.verify_lemma('lem1', 4.0, COARSE)
    assert not report.passed
    assert 'precondition' in set(report.violations_frame()['rule'])


def test_unknown_lemma(mod3):
    with pytest.raises(UnsupportedError):
        mod3.verify_lemma('lem9')


def test_opt_bound_sweep(mod3):
    report = mod3.lemopt_sweep(points=5000, seed=1)
    assert report.passed
    assert report.max_observed <= mod3.parameters['bound_tol']


def test_bound_check_requires_matched_parameters(mod3):
    with pytest.raises(DomainError):
        mod3.lemopt_bound_check((1 / 3,) * 3, (1 / 3,) * 3, (1.0,) * 3, (0.5,) * 3)


def test_case_split_covers_the_simplex(mod3):
    report = mod3.verify_theorem_opt(grid_size=60)
    assert report.passed
    assert report.max_observed <= 3.0 + mod3.parameters['bound_tol']
    assert set(report.values['case']) <= {1, 2, 3, 4}


@pytest.mark.slow
@pytest.mark.parametrize('lemma_id, s', [('lem1', 8.0), ('lem2', 7.0), ('lem3', 7.0),
                                         ('lem4', 15.0)])
def test_lemmas_hold_on_the_full_grid(mod3, lemma_id, s):
    report = mod3.verify_lemma(lemma_id, s, GridSpec())
    assert report.grid['resolution_1d'] == 4096
    assert report.passed, report.violations[:3] + [c for c in report.checks if not c['passed']]
    assert report.margin > 0


@pytest.mark.slow
def test_case_split_keeps_its_margin_on_the_full_simplex(mod3):
    report = mod3.verify_theorem_opt(grid_size=200)
    assert report.passed, report.violations[:3]
    cap = 3.0 - mod3.parameters['margin']
    outside = report.values[~report.values['inside']]
    assert len(outside) > 0
    assert (outside['psi_bound'] <= cap).all()
    assert report.margin >= mod3.parameters['margin']


@pytest.mark.parametrize('k, gamma', [(15, 0.9), (20, 0.5)])
def test_hessian_matches_numeric(k, gamma):
    report = Mod3SecondMoment(ModelParams(Model.MOD3, k, gamma)).hessian_check()
    assert report.passed, report.violations[:3] + [c for c in report.checks if not c['passed']]


def test_hessian_is_negative_definite(mod3):
    H = mod3.hessian_closed_form()
    assert np.allclose(H, H.T)
    assert np.linalg.eigvalsh(H).max() < 0
    assert np.allclose(Mod3SecondMoment.leading_minors(-H), mod3.corrected_minors(), rtol=1e-9)


def test_laplace_sum_stays_bounded(mod3):
    report = mod3.laplace_sum_check(n_list=(200, 400))
    assert report.passed
    assert list(report.values['n']) == [200, 400]


@pytest.mark.parametrize('n, k, m', [(3, 3, 2), (4, 3, 3), (5, 3, 4)])
def test_tiny_instance_bound(n, k, m):
    analysis = Mod3SecondMoment(ModelParams.from_scale(Model.MOD3, 16, 15.0))
    report = analysis.tiny_instance_check(n, k, m)
    assert report.passed, report.violations[:3] + [c for c in report.checks if not c['passed']]
    assert (report.values['slack'] <= 1e-9).all()
    if k * m > 2 * n:
        assert len(report.values) > 0
    else:
        assert report.values.empty
        assert np.isnan(report.margin)


def test_surface_rows():
    analysis = Mod3SecondMoment(ModelParams.from_scale(Model.MOD3, 16, 15.0))
    frame = analysis.surface('fig1', s_values=(3.0, 14.0), resolution=256)
    assert len(frame) == 2 * 256 * 256
    assert list(frame.columns) == ['param1', 'param2', 's', 'value']
    corner = frame[(frame['param1'] == 1.0) & (frame['param2'] == 1.0)]
    assert np.allclose(corner['value'], 3.0)
    with pytest.raises(UnsupportedError):
        analysis.surface('fig2')
