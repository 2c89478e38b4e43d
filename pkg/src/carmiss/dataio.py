'''CSV ingestion and report serialization.'''

import dataclasses
import io
import logging
from pathlib import Path
import sys
import typing
import warnings

import numpy as np
import pandas as pd

from carmiss.errors import MixedMissingTokens, ParseError, UnknownColumn, UnreadableFile
from carmiss.estimators import AdjustedEstimate
from carmiss.simulation import SimulationReport
from carmiss.trial import TrialData, compact_labels
from carmiss.utils import dataclass_deep_to_json, format_float


logger = logging.getLogger(__name__)

MISSING_TOKENS = ('', 'NA')


@dataclasses.dataclass(frozen=True)
class ColumnMap:
    outcome: str = 'y'
    treatment: str = 'treatment'
    stratum: str = 'stratum'
    covariates: tuple[str, ...] = ()
    '''Empty means every column not named above.'''


def read_frame(path: Path | str) -> pd.DataFrame:
    '''All cells as raw strings; pandas must not guess missing values.'''
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except UnicodeDecodeError as e:
        raise UnreadableFile(path, f'not UTF-8 text (byte {e.object[e.start]:#04x} at offset {e.start})') from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise UnreadableFile(path, str(e)) from e


def _require_columns(frame: pd.DataFrame, columns: typing.Iterable[str]):
    available = list(frame.columns)
    for column in columns:
        if column not in available:
            raise UnknownColumn(column, available)


def _parse_numbers(frame: pd.DataFrame, column: str, allow_missing: bool) -> tuple[np.ndarray, np.ndarray]:
    '''Floats of `column` plus the mask of missing tokens.'''
    raw = frame[column].str.strip()
    missing = raw.isin(MISSING_TOKENS).to_numpy()
    values = pd.to_numeric(raw.where(~missing), errors='coerce').to_numpy(dtype=np.float64)
    bad = np.isnan(values) & ~missing
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(row + 1, column, raw.iloc[row])
    if not allow_missing and missing.any():
        row = int(np.flatnonzero(missing)[0])
        raise ParseError(row + 1, column, raw.iloc[row], 'value is missing')
    return values, missing


def _stratum_labels(raw: pd.Series) -> list:
    stripped = raw.str.strip()
    as_int = pd.to_numeric(stripped, errors='coerce')
    if as_int.notna().all() and (as_int == as_int.round()).all():
        return [int(v) for v in as_int]
    return stripped.tolist()


def load_csv(path: Path | str, columns: ColumnMap, target_pi: float) -> TrialData:
    '''Reads a trial; covariate cells that are empty or `NA` become missing.

    Missing outcomes are kept as NaN so that validation reports them row by row.'''
    frame = read_frame(path)
    named = [columns.outcome, columns.treatment, columns.stratum]
    _require_columns(frame, named + list(columns.covariates))
    covariates = list(columns.covariates) or [c for c in frame.columns if c not in named]

    outcomes, _ = _parse_numbers(frame, columns.outcome, allow_missing=True)
    treatment, _ = _parse_numbers(frame, columns.treatment, allow_missing=False)
    strata = _stratum_labels(frame[columns.stratum])
    x = np.zeros((len(frame), len(covariates)))
    mask = np.zeros(x.shape, dtype=bool)
    tokens_seen = set()
    for j, column in enumerate(covariates):
        x[:, j], mask[:, j] = _parse_numbers(frame, column, allow_missing=True)
        tokens_seen.update(frame[column].str.strip()[mask[:, j]].unique().tolist())
    if len(tokens_seen) > 1:
        warnings.warn(
            f'{path}: missing covariates are marked both by empty cells and by NA',
            MixedMissingTokens,
        )
    treatment_values = treatment.astype(np.int64) if np.all(treatment == np.round(treatment)) else treatment
    logger.info('read %d rows, %d covariates (%d missing cells) from %s', len(frame), len(covariates), int(mask.sum()), path)
    return TrialData.from_arrays(
        outcomes, treatment_values, strata, x, mask,
        target_pi=target_pi,
        covariate_names=covariates,
    )


def load_design_columns(
        path: Path | str,
        stratum_col: str,
        factor_cols: typing.Sequence[str] = (),
) -> tuple[pd.DataFrame, list, np.ndarray | None]:
    '''The raw table, its stratum labels and the coded stratification factors.

    Only the named columns are parsed, so nothing else in the file can influence an allocation.'''
    frame = read_frame(path)
    _require_columns(frame, [stratum_col, *factor_cols])
    strata = _stratum_labels(frame[stratum_col])
    factors = None
    if factor_cols:
        factors = np.column_stack([
            compact_labels(frame[column].str.strip().tolist())[0]
            for column in factor_cols
        ])
    logger.info('read %d units to allocate from %s', len(frame), path)
    return frame, strata, factors


def trial_frame(data: TrialData, columns: ColumnMap = ColumnMap()) -> pd.DataFrame:
    '''The trial as strings, floats in shortest round-trip form and missing cells as `NA`.'''
    names = list(columns.covariates) or list(data.covariate_names)
    out = {
        columns.outcome: [format_float(v) for v in data.outcomes],
        columns.treatment: [str(int(v)) for v in data.treatment],
        columns.stratum: [str(data.stratum_labels[k - 1]) for k in data.strata],
    }
    mask = data.missing_mask
    for j, name in enumerate(names):
        out[name] = [
            'NA' if mask[i, j] else format_float(data.covariates.data[i, j])
            for i in range(data.n)
        ]
    return pd.DataFrame(out)


def write_frame(frame: pd.DataFrame, out: Path | str | None):
    write_text(frame_to_text(frame), out)


def write_text(text: str, out: Path | str | None):
    if out is None:
        sys.stdout.write(text)
        if not text.endswith('\n'):
            sys.stdout.write('\n')
    else:
        with open(out, 'w', encoding='utf-8', newline='') as f:
            f.write(text)


def write_trial_csv(data: TrialData, out: Path | str | None, columns: ColumnMap = ColumnMap()):
    write_frame(trial_frame(data, columns), out)


def _format(value) -> str:
    if value is None:
        return 'NA'
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def estimates_frame(estimates: typing.Sequence[AdjustedEstimate]) -> pd.DataFrame:
    rows = []
    for est in estimates:
        diag = est.diagnostics
        rows.append({
            'estimator': est.label,
            'regression': str(est.spec.regression),
            'missingness': str(est.spec.missingness),
            'scope': str(est.spec.scope),
            'pi': _format(est.spec.pi),
            'tau_hat': _format(est.tau_hat),
            'se': _format(est.se),
            'ci_lower': _format(est.ci[0]),
            'ci_upper': _format(est.ci[1]),
            'sigma2_hat': _format(est.sigma2_hat),
            'level': _format(est.level),
            'n': str(est.n),
            'variance': str(diag.variance_method),
            'df_adjusted': str(diag.df_adjusted).lower(),
            'q': str(diag.q),
            'dropped_columns': ';'.join(diag.dropped_columns),
            'max_imbalance': _format(diag.max_imbalance),
            'arm_counts': ';'.join(f'{n0}/{n1}' for n0, n1 in diag.arm_counts),
            'warnings': ' | '.join(est.warnings),
        })
    return pd.DataFrame(rows)


SIMULATION_COLUMNS = ('estimator', 'bias', 'SD', 'SE', 'RMSE', 'CP', 'failures')


def simulation_frame(report: SimulationReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (row.estimator, _format(row.bias), _format(row.sd), _format(row.se),
             _format(row.rmse), _format(row.cp), str(row.failures))
            for row in report.rows
        ],
        columns=list(SIMULATION_COLUMNS),
    )


def to_json(payload: typing.Any) -> str:
    return dataclass_deep_to_json(payload) + '\n'


def frame_to_text(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator='\n')
    return buffer.getvalue()


def sidecar_path(out: Path | str) -> Path:
    '''Where the JSON companion of a CSV report goes: `table.csv` -> `table.json`.'''
    out = Path(out)
    if out.suffix == '.json':
        return out.with_suffix('.sidecar.json')
    return out.with_suffix('.json')
