import json

import pytest

from generating_functions import UnsupportedError
from lab_reports import read_csv
from threshold_lab import (EXIT_FINDING, EXIT_PASS, EXIT_USAGE, RunConfig, build_parser,
                          cmd_surface, main)


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_lemma_at_its_floor_passes(capsys):
    code, captured = run(['verify', 'lem1', '--s', '8', '--grid-1d', '256', '--grid-2d', '256'],
                         capsys)
    assert code == EXIT_PASS
    document = json.loads(captured.out)
    assert document['report']['passed'] is True
    assert document['config']['target'] == 'lem1'


def test_lemma_below_its_floor_is_a_finding(capsys):
    code, captured = run(['verify', 'lem1', '--s', '4', '--grid-1d', '256', '--grid-2d', '256'],
                         capsys)
    assert code == EXIT_FINDING
    rules = {v['rule'] for v in json.loads(captured.out)['report']['violations']}
    assert 'precondition' in rules


def test_unknown_verify_target(capsys):
    code, _ = run(['verify', 'lem99'], capsys)
    assert code == EXIT_USAGE


@pytest.mark.parametrize('subcommand, target', [('surface', 'fig9'), ('plot', 'fig1'),
                                                ('verify', 'opt-mod2')])
def test_unknown_targets_in_a_config_are_unsupported(subcommand, target):
    with pytest.raises(UnsupportedError):
        RunConfig(subcommand, target).validate()


def test_surface_command_rejects_unknown_figures():
    with pytest.raises(UnsupportedError):
        cmd_surface(RunConfig('surface', 'fig9'))


def test_small_grids_are_usage_errors(capsys):
    code, captured = run(['verify', 'lem2', '--grid-1d', '64'], capsys)
    assert code == EXIT_USAGE
    assert 'usage' in captured.err


def test_surface_csv(tmp_path, capsys):
    out = tmp_path / 'fig1.csv'
    code, captured = run(['surface', 'fig1', '--s', '3', '--resolution', '256', '--out', str(out)],
                         capsys)
    assert code == EXIT_PASS
    assert '65536 grid values' in captured.out
    frame = read_csv(out)
    assert len(frame) == 256 * 256
    assert out.read_text().startswith('# config: ')


def test_exact_M(capsys):
    code, captured = run(['exact', 'M', '--m', '6', '--n', '3'], capsys)
    assert code == EXIT_PASS
    assert json.loads(captured.out)['result']['value'] == '90'


def test_exact_needs_its_sizes(capsys):
    code, captured = run(['exact', 'N0', '--n', '3'], capsys)
    assert code == EXIT_USAGE
    assert '--k' in captured.err


def test_exact_enumeration(capsys):
    code, captured = run(['exact', 'enumerate', '--n', '3', '--k', '3', '--m', '2'], capsys)
    assert code == EXIT_PASS
    result = json.loads(captured.out)['result']
    assert result['formulas'] == 810
    assert result['E[X]'] == '3'


def test_enumeration_guard_is_a_finding(capsys):
    code, _ = run(['exact', 'enumerate', '--n', '6', '--k', '3', '--m', '8'], capsys)
    assert code == EXIT_FINDING


def test_ue_constraint_family(capsys):
    code, captured = run(['exact', 'ue-constraints', '--k', '3', '--d', '4'], capsys)
    assert code == EXIT_PASS
    result = json.loads(captured.out)['result']
    assert result['count'] == 576
    assert result['matches'] is True


def test_simulate_core(capsys):
    code, captured = run(['simulate', 'core', '--n', '20000', '--gamma', '0.9'], capsys)
    assert code == EXIT_PASS
    result = json.loads(captured.out)['result']
    assert result['m'] == 18000
    assert result['core_fraction'] == pytest.approx(result['predicted']['nu'], abs=0.02)


def test_sweep_writes_its_trial_log(tmp_path, capsys):
    out = tmp_path / 'sweep.json'
    code, _ = run(['simulate', 'sweep', '--n', '200', '--gamma', '0.8', '1.0', '--trials', '50',
                   '--out', str(out)], capsys)
    assert code == EXIT_PASS
    document = json.loads(out.read_text())
    assert [row['gamma'] for row in document['sweep']] == [0.8, 1.0]
    lines = (tmp_path / 'sweep.json.trials.jsonl').read_text().splitlines()
    assert len(lines) == 100


def test_bad_seed_is_a_usage_error(capsys):
    code, _ = run(['simulate', 'core', '--seed', '-1'], capsys)
    assert code == EXIT_USAGE


@pytest.mark.parametrize('argv', [
    ['simulate', 'core', '--n', '3000', '--gamma', '0.9'],
    ['exact', 'M', '--m', '12', '--n', '4'],
])
def test_config_reproduces_the_run(argv, capsys):
    config = RunConfig.from_namespace(build_parser().parse_args(argv))
    replay = RunConfig.from_namespace(build_parser().parse_args(config.to_argv()))
    assert replay == config
    _, first = run(argv, capsys)
    _, second = run(config.to_argv(), capsys)
    assert first.out == second.out


def test_config_dict_carries_the_schema():
    config = RunConfig.from_namespace(build_parser().parse_args(['exact', 'M', '--m', '6',
                                                                 '--n', '3']))
    payload = config.to_dict()
    assert payload['schema_version'] == '1.0'
    assert 'verbose' not in payload
