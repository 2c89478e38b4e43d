import numpy as np
import pytest

from carmiss.dataio import (
    ColumnMap,
    estimates_frame, load_csv, load_design_columns, sidecar_path, trial_frame, write_trial_csv,
)
from carmiss.dgp import DgpSpec, generate
from carmiss.errors import MixedMissingTokens, ParseError, UnknownColumn, UnreadableFile
from carmiss.estimators import EstimatorSpec, estimate
from carmiss.trial import validate


def test_small_fixture(data_dir):
    with pytest.warns(MixedMissingTokens):
        data = load_csv(data_dir / 'small_trial.csv', ColumnMap(), 0.5)
    assert data.n == 4
    assert data.covariate_names == ('age', 'score')
    np.testing.assert_array_equal(data.missing_mask, [[0, 1], [1, 0], [0, 0], [0, 0]])
    assert data.stratum_labels == ('a', 'b')
    assert data.strata.tolist() == [1, 1, 2, 2]
    assert data.treatment.tolist() == [1, 0, 1, 0]
    np.testing.assert_array_equal(data.observed(0), [30.0, 41.0, 35.0])
    assert validate(data).ok


def test_explicit_covariates(data_dir):
    # only `NA` marks missing scores, so nothing is mixed
    data = load_csv(data_dir / 'small_trial.csv', ColumnMap(covariates=('score',)), 0.5)
    assert data.covariate_names == ('score',)
    assert data.missing_mask[:, 0].tolist() == [True, False, False, False]
    with pytest.raises(UnknownColumn) as e:
        load_csv(data_dir / 'small_trial.csv', ColumnMap(outcome='outcome'), 0.5)
    assert e.value.column == 'outcome'


def test_parse_error_location(data_dir):
    with pytest.raises(ParseError) as e:
        load_csv(data_dir / 'bad_value.csv', ColumnMap(), 0.5)
    assert (e.value.row, e.value.column) == (2, 'age')


def test_unreadable_files(tmp_path):
    with pytest.raises(UnreadableFile) as e:
        load_csv(tmp_path / 'absent.csv', ColumnMap(), 0.5)
    assert e.value.path == tmp_path / 'absent.csv'
    ragged = tmp_path / 'ragged.csv'
    ragged.write_text('y,treatment\n1,0\n1,0,3,4\n')
    with pytest.raises(UnreadableFile):
        load_csv(ragged, ColumnMap(), 0.5)


def test_missing_outcome_reaches_validation(tmp_path):
    path = tmp_path / 'trial.csv'
    path.write_text('y,treatment,stratum,x\n1.0,1,1,2\nNA,0,1,3\n')
    data = load_csv(path, ColumnMap(), 0.5)
    assert [v.kind for v in validate(data).violations] == ['MissingOutcome']


def test_generated_sample_round_trip(tmp_path):
    sample = generate(DgpSpec(model=3, n=150, calibration_draws=20_000), 0)
    path = tmp_path / 'sample.csv'
    write_trial_csv(sample.data, path)
    data = load_csv(path, ColumnMap(), 0.5)
    np.testing.assert_array_equal(data.outcomes, sample.data.outcomes)
    np.testing.assert_array_equal(data.treatment, sample.data.treatment)
    np.testing.assert_array_equal(data.strata, sample.data.strata)
    np.testing.assert_array_equal(data.missing_mask, sample.data.missing_mask)
    np.testing.assert_array_equal(data.covariates.filled(0.0), sample.data.covariates.filled(0.0))
    assert trial_frame(data).equals(trial_frame(sample.data))


def test_design_columns(data_dir):
    frame, strata, factors = load_design_columns(data_dir / 'enrolment.csv', 'site', ['sex', 'age_group'])
    assert len(frame) == 12
    assert strata[:3] == ['north', 'north', 'south']
    assert factors.shape == (12, 2)
    assert set(factors[:, 0].tolist()) == {1, 2}
    _, _, none = load_design_columns(data_dir / 'enrolment.csv', 'site')
    assert none is None


def test_estimates_frame(trial):
    estimates = [estimate(trial, EstimatorSpec('tom', 'mim', 'ss')), estimate(trial, EstimatorSpec('lin', 'cc'))]
    frame = estimates_frame(estimates)
    assert list(frame['estimator']) == ['tau_T,mim,ss', 'tau_L,cc']
    assert frame.loc[0, 'tau_hat'] == repr(estimates[0].tau_hat)
    assert frame.loc[0, 'pi'] == 'NA'
    assert frame.loc[1, 'warnings'] != ''
    assert frame.loc[0, 'variance'] == 'plug-in'


def test_sidecar_path(tmp_path):
    assert sidecar_path(tmp_path / 'table.csv') == tmp_path / 'table.json'
    assert sidecar_path(tmp_path / 'table.json') == tmp_path / 'table.sidecar.json'
