import json

import pandas as pd
import pytest

from carmiss.__main__ import main
from carmiss.dataio import ColumnMap, load_csv, write_trial_csv
from carmiss.dgp import DgpSpec, generate
from carmiss.estimators import EstimatorSpec, estimate
from carmiss.utils import format_float


QUICK = ['--calibration-draws', '20000', '--oracle-draws', '50000']


@pytest.fixture
def trial_csv(tmp_path):
    def write(pi: float = 0.5, n: int = 400, model: int = 2):
        path = tmp_path / f'trial_{model}_{n}_{round(pi * 100)}.csv'
        sample = generate(DgpSpec(model=model, n=n, pi=pi, calibration_draws=20_000), 0)
        write_trial_csv(sample.data, path)
        return path
    return write


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def read_csv_text(text: str) -> pd.DataFrame:
    from io import StringIO
    return pd.read_csv(StringIO(text), dtype=str, keep_default_na=False)


def test_analyze_one_estimator(capsys, trial_csv):
    path = trial_csv(pi=2 / 3)
    code, out, _ = run(
        capsys, 'analyze', '--data', path, '--method', 'tom', '--missing', 'mim', '--scope', 'ss', '--pi', '0.6667',
    )
    assert code == 0
    frame = read_csv_text(out)
    assert len(frame) == 1
    row = frame.iloc[0]
    assert row['estimator'] == 'tau_T,mim,ss'
    for column in ('tau_hat', 'se', 'ci_lower', 'ci_upper', 'sigma2_hat', 'max_imbalance', 'arm_counts'):
        assert row[column] not in ('', 'NA')


def test_fisher_at_unequal_allocation_is_flagged(capsys, trial_csv):
    path = trial_csv(pi=2 / 3)
    code, out, _ = run(capsys, 'analyze', '--data', path, '--method', 'fisher', '--missing', 'imp', '--pi', '0.6667')
    assert code == 0
    assert 'equal allocation' in read_csv_text(out).iloc[0]['warnings']


def test_cli_matches_library(capsys, trial_csv):
    path = trial_csv()
    code, out, _ = run(capsys, 'analyze', '--data', path, '--method', 'lin', 'tom', '--missing', 'mim', '--pi', '0.5')
    assert code == 0
    frame = read_csv_text(out)
    data = load_csv(path, ColumnMap(), 0.5)
    for i, regression in enumerate(('lin', 'tom')):
        expected = estimate(data, EstimatorSpec(regression, 'mim', pi=0.5))
        assert frame.iloc[i]['tau_hat'] == format_float(expected.tau_hat)
        assert frame.iloc[i]['se'] == format_float(expected.se)


def test_analyze_auto_and_json(capsys, trial_csv, tmp_path):
    path = trial_csv()
    out = tmp_path / 'report.json'
    code, _, _ = run(capsys, 'analyze', '--data', path, '--format', 'json', '--out', out)
    assert code == 0
    report = json.loads(out.read_text())
    assert report['$type'] == 'AnalysisReport'
    assert report['config']['subcommand'] == 'analyze'
    assert len(report['estimates']) == 1
    assert report['estimates'][0]['spec']['regression'] == 'fisher'
    assert len(report['imbalance']['d_k']) == len(report['stratum_labels'])


def test_simulate_is_byte_identical(capsys, tmp_path):
    outputs = []
    for name in ('first.csv', 'second.csv'):
        out = tmp_path / name
        code, _, _ = run(
            capsys, 'simulate', '--model', 2, '--n', 200, '--pi', 0.5, '--scheme', 'stratified-block',
            '--p', 5, '--reps', 4, '--seed', 42, '--out', out, *QUICK,
        )
        assert code == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    table = pd.read_csv(tmp_path / 'first.csv')
    assert list(table.columns) == ['estimator', 'bias', 'SD', 'SE', 'RMSE', 'CP', 'failures']
    assert len(table) == 19
    sidecar = json.loads((tmp_path / 'first.json').read_text())
    assert sidecar['config']['simulation']['reps'] == 4
    assert len(sidecar['report']['metadata']['coefficients']['beta']) == 5


def test_config_file_with_flag_override(capsys, tmp_path):
    config = tmp_path / 'run.ini'
    config.write_text(
        '[simulate]\nmodel = 3\nn = 120\nreps = 50\nseed = 7\n'
        'calibration-draws = 20000\noracle-draws = 50000\n'
        '[output]\nformat = json\n'
    )
    out = tmp_path / 'sim.json'
    code, _, err = run(capsys, 'simulate', '--config', config, '--reps', 2, '--out', out)
    assert code == 0, err
    report = json.loads(out.read_text())
    assert report['config']['simulation']['model'] == 3
    assert report['config']['simulation']['reps'] == 2
    assert report['report']['metadata']['seed'] == 7


def test_unknown_config_key(capsys, tmp_path):
    config = tmp_path / 'run.ini'
    config.write_text('[simulate]\nmethod = lin\n')
    code, _, err = run(capsys, 'simulate', '--config', config)
    assert code == 1
    assert 'unknown key' in err


@pytest.mark.parametrize(('argv', 'expected'), [
    (['analyze', '--data', '{data}', '--outcome-col', 'nope'], 1),
    (['analyze', '--data', '{bad}'], 2),
    (['analyze', '--data', '{data}', '--method', 'lin', '--scope', 'ss', '--missing', 'mim'], 3),
    (['analyze', '--data', '{data}', '--missing', 'mpm'], 1),
    (['analyze'], 1),
    ([], 1),
])
def test_exit_codes(capsys, data_dir, trial_csv, argv, expected):
    paths = {'data': trial_csv(n=120), 'bad': data_dir / 'bad_value.csv'}
    code, _, err = run(capsys, *(a.format(**paths) for a in argv))
    assert code == expected
    assert err.startswith('error:') or 'error:' in err


def test_randomize(capsys, data_dir, tmp_path):
    out = tmp_path / 'allocated.csv'
    code, _, err = run(
        capsys, 'randomize', '--data', data_dir / 'enrolment.csv', '--stratum-col', 'site',
        '--pi', 0.5, '--seed', 3, '--out', out,
    )
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ['id', 'site', 'sex', 'age_group', 'treatment']
    # six units per site fill one block of four and half of the next
    for _, group in frame.groupby('site'):
        assert abs(group['treatment'].sum() - 3) <= 1
    assert 'max |D|/sqrt(n)' in err


def test_randomize_minimization(capsys, data_dir, tmp_path):
    out = tmp_path / 'allocated.csv'
    code, _, _ = run(
        capsys, 'randomize', '--data', data_dir / 'enrolment.csv', '--stratum-col', 'site',
        '--factor-cols', 'sex', 'age_group', '--scheme', 'minimization', '--treat-col', 'arm', '--out', out,
    )
    assert code == 0
    assert set(pd.read_csv(out)['arm']) <= {0, 1}
    code, _, err = run(
        capsys, 'randomize', '--data', out, '--stratum-col', 'site', '--treat-col', 'arm',
    )
    assert code == 1
    assert 'already exists' in err


def test_unreadable_data_is_a_data_error(capsys, tmp_path):
    code, _, err = run(capsys, 'analyze', '--data', tmp_path / 'absent.csv', '--method', 'lin', '--missing', 'imp')
    assert code == 2
    assert 'absent.csv' in err
    latin1 = tmp_path / 'latin1.csv'
    latin1.write_bytes('y,treatment,stratum,x\n1.0,1,caf\xe9,2\n0.5,0,caf\xe9,3\n'.encode('latin-1'))
    code, _, err = run(capsys, 'analyze', '--data', latin1, '--method', 'lin', '--missing', 'imp')
    assert code == 2
    assert 'UTF-8' in err
