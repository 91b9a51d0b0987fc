"""
Tests for the queueing oracle.
"""

import pytest

from hivesim.analyze import (OracleResult, QueueingOracle, default_arrivals, littles_law_check,
                             mm1_check, scenario_stations)


def station(arrival_rate, sojourn_s, in_system, completions=1000):
    return {'arrival_rate_per_s': arrival_rate, 'mean_sojourn_s': sojourn_s,
            'mean_in_system': in_system, 'completions': completions}


def test_deviation():
    result = OracleResult('mm1', 's', expected=2.0, measured=2.1, tolerance=0.05, passed=True)
    assert result.deviation == pytest.approx(0.05)
    assert result.to_dict()['deviation'] == pytest.approx(0.05)
    assert OracleResult('x', 's', 0.0, 0.3, 0.1, True).deviation == pytest.approx(0.3)


def test_empty_system():
    result = mm1_check(0.0)
    assert result.passed and result.note == 'empty system'


@pytest.mark.parametrize('rho', [-0.1, 1.0, 1.5])
def test_load_out_of_range(rho):
    with pytest.raises(ValueError):
        mm1_check(rho)


def test_arrivals_grow_with_load():
    assert default_arrivals(0.5) < default_arrivals(0.8) < default_arrivals(0.9)


def test_littles_law_on_synthetic_stations():
    results = littles_law_check({
        'good': station(10.0, 0.5, 5.1),
        'bad': station(10.0, 0.5, 7.0),
        'thin': station(10.0, 0.5, 50.0, completions=10),
    })
    by_name = {r.subject: r for r in results}
    assert by_name['good'].passed
    assert not by_name['bad'].passed
    assert by_name['thin'].passed and by_name['thin'].note == 'too few completions'


def test_oracle_summary_without_scenario():
    summary = QueueingOracle(rhos=[0.0, 0.5], arrivals=100_000, seed=3, scenario_s=None).analyze()
    assert summary['total_checks'] == 2
    assert summary['passed'], summary['checks']


@pytest.mark.slow
def test_littles_law_holds_in_scenario():
    stations = scenario_stations(duration_s=20.0, seed=1)
    assert stations
    results = littles_law_check(stations)
    assert all(r.passed for r in results), [r.to_dict() for r in results if not r.passed]
