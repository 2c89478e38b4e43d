import math

import numpy as np
import pytest

from carmiss.dataio import frame_to_text, simulation_frame
from carmiss.dgp import DgpSpec
from carmiss.errors import ConfigError
from carmiss.estimators import EstimatorSpec, Regression, Scope
from carmiss.missingness import Missingness
from carmiss.randomization import RandomizationScheme, SchemeKind
from carmiss.simulation import (
    ReplicationResult,
    default_estimators, run_monte_carlo, run_replication, summarize,
)


def quick_spec(**kwargs) -> DgpSpec:
    kwargs.setdefault('calibration_draws', 20_000)
    kwargs.setdefault('oracle_draws', 50_000)
    kwargs.setdefault('seed', 42)
    return DgpSpec(**kwargs)


def test_default_estimators():
    labels = [spec.label for spec in default_estimators(0.5)]
    assert len(labels) == 19
    assert labels[:4] == ['tau_F', 'tau_F,ccov', 'tau_L,ccov', 'tau_T,ccov']
    assert labels[4:7] == ['tau_F,ccov,ss', 'tau_L,ccov,ss', 'tau_T,ccov,ss']
    assert labels[-1] == 'tau_T,mim,ss'
    unequal = default_estimators(2 / 3, include_cc=True)
    assert unequal[0].label == 'tau_L'
    assert [s.label for s in unequal[-2:]] == ['tau_L,cc', 'tau_T,cc']


def test_replication_records_failures_instead_of_raising():
    spec = quick_spec(n=40)
    estimators = [
        EstimatorSpec(Regression.LIN, Missingness.MIM, Scope.COMMON),
        EstimatorSpec(Regression.LIN, Missingness.MIM, Scope.STRATUM_SPECIFIC),
    ]
    result = run_replication(spec, estimators, 0, tau=2.0)
    assert result.errors[0] is None
    assert not math.isnan(result.tau_hat[0])
    assert result.errors[1].startswith('StratumTooSmall')
    assert math.isnan(result.tau_hat[1])


def test_summarize():
    estimators = [EstimatorSpec('fisher', 'none'), EstimatorSpec('fisher', 'mim')]
    results = [
        ReplicationResult(1, np.array([2.0, np.nan]), np.array([0.5, np.nan]), np.array([1.0, np.nan]), (None, 'x')),
        ReplicationResult(0, np.array([1.0, 1.5]), np.array([0.4, 0.2]), np.array([0.0, 1.0]), (None, None)),
        ReplicationResult(2, np.array([3.0, 2.5]), np.array([0.6, 0.3]), np.array([1.0, 1.0]), (None, None)),
    ]
    rows = summarize(results, estimators, tau=1.5, tau_cc=1.0)
    benchmark, adjusted = rows
    assert benchmark.bias == pytest.approx(0.5)
    assert benchmark.sd == pytest.approx(1.0)
    assert benchmark.se == pytest.approx(0.5)
    assert benchmark.rmse == pytest.approx(math.sqrt((0.25 + 0.25 + 2.25) / 3))
    assert benchmark.cp == pytest.approx(2 / 3)
    assert benchmark.sd_ratio_to_benchmark == pytest.approx(1.0)
    assert adjusted.replications == 2 and adjusted.failures == 1
    assert adjusted.failure_messages == ('x',)
    assert adjusted.sd == pytest.approx(math.sqrt(0.5))
    assert adjusted.sd_ratio_to_benchmark == pytest.approx(math.sqrt(0.5))
    assert adjusted.bias_vs_cc_target is None


def test_summarize_single_success_has_no_sd():
    estimators = [EstimatorSpec('fisher', 'none')]
    results = [ReplicationResult(0, np.array([1.0]), np.array([0.1]), np.array([1.0]), (None,))]
    row = summarize(results, estimators, tau=1.0, tau_cc=1.0)[0]
    assert math.isnan(row.sd)
    assert math.isnan(row.sd_ratio_to_benchmark)


def test_small_study():
    report = run_monte_carlo(quick_spec(), replications=8)
    assert len(report.rows) == 19
    for row in report.rows:
        assert row.failures == 0
        assert 0.0 <= row.cp <= 1.0
        assert row.se > 0.0
    assert report.metadata.replications == 8
    assert report.metadata.true_tau == pytest.approx(2.0, abs=0.1)
    assert set(report.metadata.coefficients) == {'beta'}


def test_results_do_not_depend_on_workers():
    spec = quick_spec(model=1, n=200, pi=2 / 3, scheme=RandomizationScheme(SchemeKind.MINIMIZATION, 2 / 3))
    one = run_monte_carlo(spec, replications=60, threads=1)
    two = run_monte_carlo(spec, replications=60, threads=2)
    assert frame_to_text(simulation_frame(one)) == frame_to_text(simulation_frame(two))


def test_bad_replication_count():
    with pytest.raises(ConfigError):
        run_monte_carlo(quick_spec(), replications=0)


##################
### Acceptance ###
##################

def rows_by_label(report):
    return {row.estimator: row for row in report.rows}


@pytest.mark.slow
def test_equal_allocation_coverage():
    report = run_monte_carlo(DgpSpec(model=2, n=200, pi=0.5), replications=10_000, threads=8)
    rows = rows_by_label(report)
    assert 0.94 <= rows['tau_F'].cp <= 0.96
    assert rows['tau_F,mim'].sd < rows['tau_F'].sd
    for label, row in rows.items():
        if label.startswith(('tau_L', 'tau_T')):
            assert 0.92 <= row.cp <= 0.98, label


@pytest.mark.slow
@pytest.mark.parametrize(('pi', 'letter'), [(0.5, 'F'), (2 / 3, 'L'), (2 / 3, 'T')])
def test_efficiency_ordering(pi, letter):
    report = run_monte_carlo(DgpSpec(model=2, n=2000, pi=pi), replications=2000, threads=8)
    rows = rows_by_label(report)
    chain = [rows[f'tau_{letter},mim'], rows[f'tau_{letter},imp'], rows[f'tau_{letter},ccov'], rows[report.rows[0].estimator]]
    for smaller, larger in zip(chain, chain[1:]):
        # Monte Carlo SE of an SD estimate is about SD / sqrt(2R)
        pooled = math.hypot(smaller.sd, larger.sd) / math.sqrt(2 * 2000)
        assert smaller.sd <= larger.sd + pooled


@pytest.mark.slow
def test_plug_in_variance_is_consistent():
    report = run_monte_carlo(DgpSpec(model=2, n=2000, pi=2 / 3), replications=2000, threads=8)
    for row in report.rows[1:]:
        if row.estimator.startswith(('tau_L', 'tau_T')):
            assert 0.93 <= row.se / row.sd <= 1.07, row.estimator
            assert 0.935 <= row.cp <= 0.965, row.estimator


@pytest.mark.slow
def test_complete_case_bias():
    spec = DgpSpec(model=1, n=2000, pi=0.5)
    estimators = [
        EstimatorSpec('lin', 'cc', pi=0.5),
        EstimatorSpec('lin', 'mim', pi=0.5),
    ]
    report = run_monte_carlo(spec, estimators, replications=2000, threads=8)
    cc, mim = report.rows
    assert abs(cc.bias) > 5 * cc.sd / math.sqrt(cc.replications)
    assert abs(mim.bias) < 3 * mim.sd / math.sqrt(mim.replications)
