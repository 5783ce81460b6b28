import json
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from generating_functions import DomainError
from lab_config import DEFAULTS, get_defaults, merged
from lab_reports import (GridSpec, VerificationReport, dumps, read_csv, write_csv, write_json,
                         write_jsonl)


def test_grid_minimum():
    with pytest.raises(DomainError):
        GridSpec(128, 256)
    with pytest.raises(DomainError):
        GridSpec(256, 256, slices=1)
    assert GridSpec().to_dict()['resolution_1d'] == DEFAULTS['momed3']['grid_1d']


def test_report_passes_without_findings():
    report = VerificationReport('lem2')
    assert report.add_check('bound', 2.5, 3.0, '<')
    assert report.passed
    assert report.summary()['message'] == '✓ lem2: verified'


def test_failed_check_fails_the_report():
    report = VerificationReport('lem3')
    assert not report.add_check('corner', 3.2, 2.98, '<')
    assert not report.passed
    assert report.summary()['failed_checks'] == ['corner']


def test_violations_carry_their_coordinates():
    report = VerificationReport('lem1a')
    report.add_violation('strictly_decreasing', 'OPT rises', y=0.01)
    report.add_violation('precondition', 's too small', severity='WARNING', s=4.0)
    frame = report.violations_frame()
    assert list(frame['rule']) == ['strictly_decreasing', 'precondition']
    assert frame.loc[0, 'severity'] == 'CRITICAL'
    assert frame.loc[0, 'y'] == 0.01
    assert report.summary()['message'].startswith('⚠ lem1a: 2 violations')


def test_report_serialises(tmp_path):
    report = VerificationReport('hessian', parameters={'k': 15}, max_observed=np.float64(1e-7))
    report.values = pd.DataFrame({'closed': [1.0, np.nan]})
    report.add_check('ratio', Fraction(1, 3), Fraction(1, 2), '<')
    path = tmp_path / 'nested' / 'report.json'
    write_json(report.to_dict({'seed': 42}), path)
    document = json.loads(path.read_text())
    assert document['schema_version'] == '1.0'
    assert document['config'] == {'seed': 42}
    assert document['checks'][0]['value'] == '1/3'
    assert len(document['values']) == 2


def test_dumps_rejects_unknown_objects():
    with pytest.raises(TypeError):
        dumps({'bad': object()})


def test_csv_round_trip_skips_the_config_line(tmp_path):
    frame = pd.DataFrame({'param1': [0.0, 0.5], 'value': [3.0, 2.9]})
    path = tmp_path / 'surface.csv'
    write_csv(frame, path, {'target': 'fig1'})
    assert path.read_text().splitlines()[0] == '# config: {"target": "fig1"}'
    pd.testing.assert_frame_equal(read_csv(path), frame)


def test_jsonl_log(tmp_path):
    path = tmp_path / 'trials.jsonl'
    write_jsonl(pd.DataFrame({'trial': [0, 1], 'sat': [True, False]}), path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows == [{'trial': 0, 'sat': True}, {'trial': 1, 'sat': False}]


def test_merged_overrides():
    settings = merged('sim', trials=80, threads=None)
    assert settings['trials'] == 80
    assert settings['threads'] == DEFAULTS['sim']['threads']
    with pytest.raises(KeyError):
        merged('sim', unknown=1)


def test_defaults_are_copies():
    settings = get_defaults('momue')
    settings['d'] = 9
    assert DEFAULTS['momue']['d'] == 4
