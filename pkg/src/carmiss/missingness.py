'''Missingness processors: turn (covariates, mask) into the adjustment design U.'''

import dataclasses
import enum
import logging
import typing

import numpy as np

from carmiss.errors import AllMissingColumn, MethodNotSupported, NoCompleteRows
from carmiss.trial import TrialData, build_index


logger = logging.getLogger(__name__)


class Missingness(enum.StrEnum):
    CCOV = 'ccov'
    IMP = 'imp'
    MIM = 'mim'
    CC = 'cc'
    NONE = 'none'


class ColumnKind(enum.StrEnum):
    ORIGINAL = 'original'
    IMPUTED = 'imputed'
    INDICATOR = 'indicator'


@dataclasses.dataclass(frozen=True)
class ColumnProvenance:
    kind: ColumnKind
    source: int
    '''Zero-based covariate column this design column comes from.'''

    def __str__(self):
        return f'{self.kind}[{self.source + 1}]'


@dataclasses.dataclass(frozen=True)
class ObservedMean:
    '''Impute column j with the mean of its observed entries.'''


@dataclasses.dataclass(frozen=True)
class Constant:
    '''Impute with a fixed value, either one scalar for every column or one value per column.'''

    value: float | tuple[float, ...] = 0.0


ImputationPolicy = ObservedMean | Constant


@dataclasses.dataclass(frozen=True, eq=False)
class ProcessedCovariates:
    design: np.ndarray
    '''n x q adjustment columns U.'''

    column_provenance: tuple[ColumnProvenance, ...]

    method: Missingness

    imputation_values: np.ndarray | None = None
    '''Length-p vector c; `None` for ccov, cc and none.'''

    kept_rows: np.ndarray | None = None
    '''Rows surviving complete-case deletion (cc only).'''

    @property
    def q(self) -> int:
        return int(self.design.shape[1])

    def names(self, covariate_names: typing.Sequence[str]) -> list[str]:
        out = []
        for prov in self.column_provenance:
            name = covariate_names[prov.source]
            out.append(f'M({name})' if prov.kind == ColumnKind.INDICATOR else name)
        return out


def imputation_values(data: TrialData, policy: ImputationPolicy) -> np.ndarray:
    match policy:
        case ObservedMean():
            values = np.empty(data.p)
            for j in range(data.p):
                observed = data.observed(j)
                if observed.size == 0:
                    raise AllMissingColumn(j + 1)
                values[j] = observed.mean()
            return values
        case Constant(value=value):
            return np.broadcast_to(np.asarray(value, dtype=np.float64), (data.p,)).copy()
    raise AssertionError(policy)


def process_none(data: TrialData) -> ProcessedCovariates:
    return ProcessedCovariates(np.zeros((data.n, 0)), (), Missingness.NONE)


def process_ccov(data: TrialData) -> ProcessedCovariates:
    '''Keeps the covariates that are observed for every unit.'''
    complete = ~data.missing_mask.any(axis=0)
    columns = np.flatnonzero(complete)
    design = np.ascontiguousarray(data.covariates.data[:, columns])
    return ProcessedCovariates(
        design=design,
        column_provenance=tuple(ColumnProvenance(ColumnKind.ORIGINAL, int(j)) for j in columns),
        method=Missingness.CCOV,
    )


def _imputed_design(data: TrialData, values: np.ndarray) -> tuple[np.ndarray, tuple[ColumnProvenance, ...]]:
    mask = data.missing_mask
    design = data.filled(values)
    provenance = tuple(
        ColumnProvenance(ColumnKind.IMPUTED if mask[:, j].any() else ColumnKind.ORIGINAL, j)
        for j in range(data.p)
    )
    return design, provenance


def process_imp(data: TrialData, policy: ImputationPolicy | None = None) -> ProcessedCovariates:
    values = imputation_values(data, ObservedMean() if policy is None else policy)
    design, provenance = _imputed_design(data, values)
    return ProcessedCovariates(design, provenance, Missingness.IMP, imputation_values=values)


def indicator_columns(mask: np.ndarray) -> list[int]:
    '''Mask columns that are neither all zero nor an exact copy of an earlier kept column.'''
    kept: list[int] = []
    seen: set[bytes] = set()
    for j in range(mask.shape[1]):
        column = mask[:, j]
        if not column.any():
            continue
        key = np.packbits(column).tobytes()
        if key in seen:
            continue
        seen.add(key)
        kept.append(j)
    return kept


def process_mim(data: TrialData, policy: ImputationPolicy | None = None) -> ProcessedCovariates:
    '''Imputed covariates followed by the cleaned-up missingness indicators.

    Indicators that are collinear with other columns in a less obvious way are left for the
    regression rank guard to drop.'''
    values = imputation_values(data, Constant(0.0) if policy is None else policy)
    design, provenance = _imputed_design(data, values)
    mask = data.missing_mask
    indicators = indicator_columns(mask)
    if indicators:
        design = np.hstack([design, mask[:, indicators].astype(np.float64)])
        provenance = provenance + tuple(ColumnProvenance(ColumnKind.INDICATOR, j) for j in indicators)
    return ProcessedCovariates(design, provenance, Missingness.MIM, imputation_values=values)


def process_cc(data: TrialData) -> tuple[TrialData, ProcessedCovariates]:
    '''Complete-case deletion.

    Only meant to show its bias: the complete units are a selected subpopulation whenever
    missingness is related to the outcomes.'''
    complete = ~data.missing_mask.any(axis=1)
    kept_rows = np.flatnonzero(complete)
    if kept_rows.size == 0:
        raise NoCompleteRows('no row is fully observed')
    present = set(np.unique(data.strata[kept_rows]).tolist())
    for k in range(1, data.n_strata + 1):
        if k not in present:
            raise NoCompleteRows(f'stratum {k} has no fully observed row')
    reduced = data.subset(kept_rows)
    index = build_index(reduced, require_both_arms=False)
    for k in range(index.n_strata):
        for arm, count in ((1, index.n_k1[k]), (0, index.n_k0[k])):
            if count == 0:
                raise NoCompleteRows(f'stratum {k + 1} has no fully observed row in arm {arm}')
    logger.debug('complete-case analysis keeps %d of %d rows', kept_rows.size, data.n)
    processed = ProcessedCovariates(
        design=np.ascontiguousarray(reduced.covariates.data),
        column_provenance=tuple(ColumnProvenance(ColumnKind.ORIGINAL, j) for j in range(data.p)),
        method=Missingness.CC,
        kept_rows=kept_rows,
    )
    return reduced, processed


def process(
        data: TrialData,
        method: Missingness | str,
        policy: ImputationPolicy | None = None,
) -> tuple[TrialData, ProcessedCovariates]:
    '''Runs processor `method`; only complete-case analysis changes the data.'''
    if method == 'mpm':
        raise MethodNotSupported(
            'mpm', 'the missing pattern method needs many units per missingness pattern'
        )
    try:
        method = Missingness(method)
    except ValueError:
        raise MethodNotSupported(str(method)) from None
    match method:
        case Missingness.NONE:
            return data, process_none(data)
        case Missingness.CCOV:
            return data, process_ccov(data)
        case Missingness.IMP:
            return data, process_imp(data, policy)
        case Missingness.MIM:
            return data, process_mim(data, policy)
        case Missingness.CC:
            return process_cc(data)
    raise AssertionError(method)
