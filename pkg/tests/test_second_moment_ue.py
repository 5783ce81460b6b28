import math

import numpy as np
import pytest

from generating_functions import DomainError, Model, ModelParams, Q_eval, UnsupportedError
from lab_reports import GridSpec
from second_moment_ue import (UniqueExtSecondMoment, inverted_opt, log_column_ue, log_psi_ue,
                              opt_ue, pukl_points)

COARSE = GridSpec(256, 256)


@pytest.mark.parametrize('s', [5.0, 7.0, 12.0])
def test_opt_corner_values(s):
    assert opt_ue(0.0, 1.0, 0.0, s) == pytest.approx(4.0, rel=1e-12)
    assert opt_ue(1.0, 1.0, 3.0, s) == pytest.approx(4.0, rel=1e-12)
    assert opt_ue(1.0, 1.0, 0.0, s) == pytest.approx(16.0, rel=1e-12)
    assert opt_ue(0.0, 1.0, 3.0, s) == pytest.approx(4.0**Q_eval(s), rel=1e-9)


def test_inverted_form_matches_direct():
    b = np.linspace(0.2, 1.0, 9)
    u = np.linspace(0.01, 1 / 3, 9)
    assert np.allclose(inverted_opt(b, u, 7.0), opt_ue(1.0, b, 1.0 / u, 7.0), rtol=1e-10)


def test_column_polynomial_in_log_domain():
    z = 0.6
    direct = math.log((1 + z)**5 + 3 * (1 - z / 3)**5)
    assert log_column_ue(z, 5, 4) == pytest.approx(direct, rel=1e-12)
    assert np.isfinite(log_column_ue(1e6, 40, 4))


def test_log_psi_at_the_center(ue_params):
    s = ue_params.s
    value = log_psi_ue(0.75, 0.75, s, s, 3.0, ue_params)
    assert value == pytest.approx((1 - 2 * ue_params.gamma) * math.log(4.0), abs=1e-9)


def test_log_psi_domain(ue_params):
    with pytest.raises(DomainError):
        log_psi_ue(1.2, 0.5, 1.0, 1.0, 1.0, ue_params)
    with pytest.raises(DomainError):
        log_psi_ue(0.5, 0.5, 1.0, 1.0, 0.0, ue_params)


@pytest.mark.parametrize('lemma_id, s', [('flagekl', 7.0), ('stgekl', 6.0), ('einmi', 7.0),
                                         ('pukl', 6.0), ('lagr', 5.0)])
def test_lemmas_hold_at_their_floor(ue, lemma_id, s):
    report = ue.verify_lemma(lemma_id, s, COARSE)
    assert report.passed, report.violations[:3] + [c for c in report.checks if not c['passed']]


def test_lemma_below_its_floor_is_flagged(ue):
    report = ue.verify_lemma('flagekl', 5.0, COARSE)
    assert not report.passed
    assert report.violations[0]['rule'] == 'precondition'


def test_lemmas_need_four_values(ue_params):
    analysis = UniqueExtSecondMoment(ue_params, d=3)
    with pytest.raises(UnsupportedError):
        analysis.verify_lemma('lagr')


def test_bridge_points_rise_monotonically():
    points = pukl_points(20.0)
    products = [a * c for a, c in points]
    assert products == sorted(products)


def test_opt_bound_sweep(ue):
    report = ue.lagrkl_sweep(points=5000, seed=2)
    assert report.passed


def test_bound_check_requires_matched_parameters(ue):
    with pytest.raises(DomainError):
        ue.lagrkl_bound_check(0.5, 0.5, 1.0, 1.0, 2.0)
    result = ue.lagrkl_bound_check(0.5, 0.5, 1.0, 1.0, 1.0)
    assert result['holds']


def test_regions_meet_continuously(ue):
    Q = ue.params.Q
    for left, right, boundary in zip(('steep', 'bridge', 'flat'), ('bridge', 'flat', 'edge'),
                                     UniqueExtSecondMoment.region_bounds(Q)):
        one = ue.opt(*(np.asarray(v).item() for v in ue.region_params(left, [boundary], Q)))
        two = ue.opt(*(np.asarray(v).item() for v in ue.region_params(right, [boundary], Q)))
        assert abs(one - two) / max(one, two) <= ue.parameters['continuity_rtol']


def test_region_parameters_reproduce_the_ratio(ue):
    Q = ue.params.Q
    steep, bridge, flat = UniqueExtSecondMoment.region_bounds(Q)
    targets = {'steep': steep / 2, 'bridge': 0.5 * (steep + bridge),
               'flat': 0.5 * (bridge + flat), 'edge': 10.0}
    for region, P in targets.items():
        a, b, c = (np.asarray(v).item() for v in ue.region_params(region, [P], Q))
        assert a * c / b == pytest.approx(P, rel=1e-9)


def test_region_split_theorem(ue):
    report = ue.verify_theorem_unopt(lambda_grid=1024)
    assert report.passed, report.violations[:3]
    assert report.max_observed <= 4.0 + ue.parameters['bound_tol']
    assert set(report.values['region']) == {'steep', 'bridge', 'flat', 'edge'}


@pytest.mark.slow
@pytest.mark.parametrize('lemma_id, s', [('flagekl', 7.0), ('stgekl', 6.0), ('einmi', 7.0),
                                         ('pukl', 6.0), ('lagr', 5.0)])
def test_lemmas_hold_on_the_full_grid(ue, lemma_id, s):
    report = ue.verify_lemma(lemma_id, s, GridSpec())
    assert report.grid['resolution_1d'] == 4096
    assert report.passed, report.violations[:3] + [c for c in report.checks if not c['passed']]
    assert report.margin >= 0


@pytest.mark.slow
def test_region_split_keeps_its_margin_on_the_full_grid(ue):
    report = ue.verify_theorem_unopt(lambda_grid=4096)
    assert report.passed, report.violations[:3]
    cap = 4.0 - ue.parameters['margin']
    outside = report.values[~report.values['inside']]
    assert len(outside) > 0
    assert (outside['psi_bound'] <= cap).all()
    assert report.margin >= ue.parameters['margin']


def test_critical_point(ue):
    report = ue.critical_point_check()
    assert report.passed, [c for c in report.checks if not c['passed']] + report.violations
    assert np.linalg.eigvalsh(ue.hessian_closed_form()).max() < 0


@pytest.mark.parametrize('d', [4, 2])
def test_tiny_instance_bound(ue, d):
    report = ue.tiny_instance_check(4, 3, 3, d=d)
    assert report.passed
    if d == 2:
        assert 'agrees with parity count' in set(report.checks_frame()['check'])


def test_tiny_instance_without_formulas(ue):
    with pytest.raises(DomainError):
        ue.tiny_instance_check(6, 3, 2)


def test_analysis_needs_the_ue_model():
    with pytest.raises(DomainError):
        UniqueExtSecondMoment(ModelParams(Model.MOD3, 9, 0.9))


@pytest.mark.parametrize('which, upper', [('fig2', 3.0), ('fig3', 1 / 3)])
def test_surfaces(ue, which, upper):
    frame = ue.surface(which, s_values=(7.0,), resolution=256)
    assert len(frame) == 256 * 256
    assert frame['param2'].max() == pytest.approx(upper)
    assert (frame['value'] > 0).all()
