"""
Tests for the command-line interface and its exit codes.
"""

import json

import pytest

from main import EXIT_INVALID, EXIT_IO, EXIT_OK, main, parse_pins


def test_check_valid_program(scenario_dir, capsys):
    assert main(['check', str(scenario_dir / 'scenario_b.hive')]) == EXIT_OK
    out = capsys.readouterr().out
    assert '5 task(s)' in out
    assert 'exec_time <= 10s' in out


def test_check_invalid_program(tmp_path, capsys):
    path = tmp_path / 'bad.hive'
    path.write_text("TaskGraph(list=['a'])\nTask(a None)\n", encoding='utf-8')
    assert main(['check', str(path)]) == EXIT_INVALID
    assert 'bad.hive:2:8' in capsys.readouterr().out


def test_check_semantic_errors(tmp_path, capsys):
    path = tmp_path / 'cycle.hive'
    path.write_text("""TaskGraph(list=['a','b'])
Task(a,x,y,'code/a',parentTask=['b'],childTask=['b'])
Task(b,y,x,'code/b',parentTask=['a'],childTask=['a'])
""", encoding='utf-8')
    assert main(['check', str(path)]) == EXIT_INVALID
    assert 'cycle' in capsys.readouterr().out


def test_check_missing_file(tmp_path):
    assert main(['check', str(tmp_path / 'nope.hive')]) == EXIT_IO


def test_unknown_workload():
    assert main(['synth', 'S99']) == EXIT_IO


def test_missing_scenario_file(tmp_path):
    assert main(['run', str(tmp_path / 'missing.json')]) == EXIT_IO


def test_bad_scenario_key(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps({'workload': 'S1', 'drones': 3}), encoding='utf-8')
    assert main(['run', str(path)]) == EXIT_IO


def test_bad_mode_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(['run', 'S1', '--mode', 'swarm'])
    assert info.value.code == 2


def test_parse_pins():
    assert parse_pins(['frameFilter=Edge', 'mapUpdate=Cloud']) == {'frameFilter': 'Edge',
                                                                     'mapUpdate': 'Cloud'}
    assert parse_pins(None) == {}
    with pytest.raises(Exception, match='bad --pin'):
        parse_pins(['frameFilter'])


def test_oracle_command(tmp_path):
    code = main(['oracle', '--rho', '0.5', '--arrivals', '100000', '--no-little',
                 '--out', str(tmp_path)])
    assert code == EXIT_OK
    report = json.loads((tmp_path / 'oracle.json').read_text(encoding='utf-8'))
    assert report['total_checks'] == 1 and report['passed']


@pytest.mark.slow
def test_synth_writes_reports(tmp_path):
    assert main(['synth', 'S1', '--no-prune', '--out', str(tmp_path)]) == EXIT_OK
    plans = json.loads((tmp_path / 'plans.json').read_text(encoding='utf-8'))
    assert len(plans['plans']) == 4
    assert (tmp_path / 'evals.csv').is_file()
    assert (tmp_path / 'synth.md').is_file()


@pytest.mark.slow
def test_run_writes_summary(tmp_path):
    code = main(['run', 'S1', '--devices', '2', '--mode', 'centralized', '--out', str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / 'summary.csv').is_file()
    assert (tmp_path / 'base' / 'centralized' / 'seed-0' / 'metrics.json').is_file()
