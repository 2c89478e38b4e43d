'''Trial data, stratum bookkeeping and the imbalance diagnostic.'''

import dataclasses
from fractions import Fraction
import logging
import math
import typing

import numpy as np

from carmiss.errors import ArmEmptyInStratum, ValidationError, Violation


logger = logging.getLogger(__name__)


def compact_labels(
        labels: typing.Sequence[typing.Any] | np.ndarray,
        levels: typing.Sequence[typing.Any] | None = None,
) -> tuple[np.ndarray, tuple[typing.Any, ...]]:
    '''Maps arbitrary stratum labels onto contiguous codes 1..K.

    Returns the codes and the original label of each code (code `k` has label `levels[k-1]`).
    Without explicit `levels` the labels are sorted; labels absent from explicit `levels`
    are an error.'''
    raw = np.asarray(labels)
    if levels is None:
        levels = tuple(np.unique(raw).tolist())
    else:
        levels = tuple(levels)
    position = {level: k + 1 for k, level in enumerate(levels)}
    try:
        codes = np.fromiter((position[label] for label in raw.tolist()), dtype=np.int64, count=raw.size)
    except KeyError as e:
        raise ValueError(f'stratum label {e.args[0]!r} is not among the declared levels') from None
    return codes, levels


@dataclasses.dataclass(frozen=True, eq=False)
class TrialData:
    '''Observed data of one experiment.'''

    outcomes: np.ndarray
    '''Observed outcomes Y_i.'''

    treatment: np.ndarray
    '''Treatment indicators A_i (1 = treated).'''

    strata: np.ndarray
    '''Stratum codes B_i in 1..K.'''

    covariates: np.ma.MaskedArray
    '''n x p covariates X; masked cells are missing and their payload is never read.'''

    target_pi: float
    '''Target treated proportion pi of the design.'''

    stratum_labels: tuple[typing.Any, ...] = ()
    '''Original label of each stratum code, in code order.'''

    covariate_names: tuple[str, ...] = ()

    @classmethod
    def from_arrays(
            cls,
            outcomes: typing.Any,
            treatment: typing.Any,
            strata: typing.Any,
            covariates: typing.Any = None,
            missing_mask: typing.Any = None,
            target_pi: float = 0.5,
            stratum_levels: typing.Sequence[typing.Any] | None = None,
            covariate_names: typing.Sequence[str] | None = None,
    ) -> 'TrialData':
        '''Builds trial data, compacting stratum labels to 1..K.

        `missing_mask` marks missing cells with 1. Their payload is overwritten, so whatever
        value the caller put there (NaN, a sentinel) is never observed downstream.'''
        outcomes = np.asarray(outcomes, dtype=np.float64)
        treatment = np.asarray(treatment)
        if treatment.dtype.kind in 'biu':
            treatment = treatment.astype(np.int64)
        codes, levels = compact_labels(strata, stratum_levels)
        if covariates is None:
            covariates = np.zeros((outcomes.shape[0], 0))
        x = np.asarray(covariates, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        mask = np.zeros(x.shape, dtype=bool) if missing_mask is None else np.asarray(missing_mask)
        if mask.ndim == 1:
            mask = mask[:, None]
        non_binary = ()
        if mask.shape == x.shape:
            non_binary = tuple(
                (int(i), int(j), mask[i, j].item()) for i, j in zip(*np.nonzero(~np.isin(mask, (0, 1))))
            )
            x = np.where(mask.astype(bool), 0.0, x)
        masked = np.ma.MaskedArray(x, mask=mask.astype(bool) if mask.shape == x.shape else False)
        names = tuple(covariate_names) if covariate_names is not None else tuple(
            f'X{j + 1}' for j in range(x.shape[1])
        )
        data = cls(
            outcomes=outcomes,
            treatment=treatment,
            strata=codes,
            covariates=masked,
            target_pi=float(target_pi),
            stratum_labels=levels,
            covariate_names=names,
        )
        if mask.shape != x.shape:
            # keep the raw mask around so that validate() can report the mismatch
            object.__setattr__(data, '_raw_mask_shape', mask.shape)
        if non_binary:
            object.__setattr__(data, '_non_binary_mask', non_binary)
        return data

    @property
    def n(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def n_strata(self) -> int:
        return len(self.stratum_labels) if self.stratum_labels else int(self.strata.max(initial=0))

    @property
    def missing_mask(self) -> np.ndarray:
        return np.ma.getmaskarray(self.covariates)

    def observed(self, column: int) -> np.ndarray:
        '''The observed entries of covariate `column`.'''
        return self.covariates[:, column].compressed()

    def filled(self, values: np.ndarray) -> np.ndarray:
        '''Covariates with missing cells of column j replaced by `values[j]`.'''
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), (self.p,))
        return np.where(self.missing_mask, values[None, :], self.covariates.data)

    def subset(self, rows: np.ndarray) -> 'TrialData':
        '''Rows `rows` as a new trial; strata that vanish are dropped and codes compacted.'''
        rows = np.asarray(rows)
        codes, kept_levels = compact_labels(self.strata[rows])
        return TrialData(
            outcomes=self.outcomes[rows],
            treatment=self.treatment[rows],
            strata=codes,
            covariates=self.covariates[rows],
            target_pi=self.target_pi,
            stratum_labels=tuple(self.stratum_labels[k - 1] for k in kept_levels),
            covariate_names=self.covariate_names,
        )

    def with_outcomes(self, outcomes: np.ndarray) -> 'TrialData':
        return dataclasses.replace(self, outcomes=np.asarray(outcomes, dtype=np.float64))


@dataclasses.dataclass(frozen=True)
class ValidationResult:
    violations: list[Violation]
    advisories: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(data: TrialData) -> ValidationResult:
    '''Checks every trial invariant and reports all violations with their coordinates.'''
    violations: list[Violation] = []
    advisories: list[str] = []
    n = data.outcomes.shape[0]
    for name, length in (
            ('treatment', data.treatment.shape[0]),
            ('strata', data.strata.shape[0]),
            ('covariates', data.covariates.shape[0]),
    ):
        if length != n:
            violations.append(Violation('LengthMismatch', f'{name} has {length} rows, outcomes has {n}'))
    raw_mask_shape = getattr(data, '_raw_mask_shape', None)
    if raw_mask_shape is not None:
        violations.append(Violation(
            'LengthMismatch',
            f'missing mask has shape {raw_mask_shape}, covariates have {data.covariates.shape}',
        ))
    if not 0.0 < data.target_pi < 1.0 or math.isnan(data.target_pi):
        violations.append(Violation('PiOutOfRange', f'target pi {data.target_pi} is not in (0, 1)'))
    if violations and any(v.kind == 'LengthMismatch' for v in violations):
        return ValidationResult(violations, advisories)

    treatment = np.asarray(data.treatment, dtype=np.float64)
    for row in np.flatnonzero(~np.isin(treatment, (0.0, 1.0))):
        violations.append(Violation(
            'NonBinaryTreatment', f'treatment value {data.treatment[row]!r}', row=int(row),
        ))
    for row in np.flatnonzero(~np.isfinite(data.outcomes)):
        violations.append(Violation('MissingOutcome', 'outcome is missing or not finite', row=int(row)))
    for row, column, value in getattr(data, '_non_binary_mask', ()):
        violations.append(Violation(
            'NonBinaryMask', f'missing-mask value {value!r} is neither 0 nor 1', row=row, column=column,
        ))
    observed_payload = np.where(data.missing_mask, 0.0, data.covariates.data)
    for row, column in zip(*np.nonzero(~np.isfinite(observed_payload))):
        violations.append(Violation(
            'MaskedValueRead',
            'non-finite value in a cell not marked missing',
            row=int(row), column=int(column),
        ))
    n_strata = data.n_strata
    counts = np.bincount(data.strata, minlength=n_strata + 1)[1:]
    for k in np.flatnonzero(counts == 0):
        label = data.stratum_labels[k] if data.stratum_labels else k + 1
        violations.append(Violation('EmptyStratum', f'stratum {k + 1} (label {label!r}) has no units'))
    if n_strata < 1:
        violations.append(Violation('EmptyStratum', 'no strata'))
    if data.stratum_labels and data.stratum_labels != tuple(range(1, n_strata + 1)):
        advisories.append(
            f'stratum labels {data.stratum_labels!r} compacted to 1..{n_strata}'
        )
    return ValidationResult(violations, advisories)


def ensure_valid(data: TrialData) -> list[str]:
    result = validate(data)
    if not result.ok:
        raise ValidationError(result.violations)
    for advisory in result.advisories:
        logger.info(advisory)
    return result.advisories


@dataclasses.dataclass(frozen=True, eq=False)
class StratumIndex:
    '''Per-stratum membership and arm counts.'''

    members: tuple[np.ndarray, ...]
    '''Row indices of stratum k at position k-1.'''

    n_k: np.ndarray
    n_k1: np.ndarray
    n_k0: np.ndarray
    n: int

    @property
    def n_strata(self) -> int:
        return len(self.members)

    @property
    def p_k(self) -> np.ndarray:
        '''p_n[k] = n_[k] / n.'''
        return self.n_k / self.n

    @property
    def pi_k(self) -> np.ndarray:
        '''pi_n[k] = n_[k]1 / n_[k].'''
        return self.n_k1 / self.n_k

    def arm_members(self, k: int, arm: int, treatment: np.ndarray) -> np.ndarray:
        rows = self.members[k - 1]
        return rows[treatment[rows] == arm]

    def flatten(self) -> np.ndarray:
        '''Stratum code of every row, rebuilt from the membership lists.'''
        labels = np.zeros(self.n, dtype=np.int64)
        for k, rows in enumerate(self.members, start=1):
            labels[rows] = k
        return labels


def build_index(data: TrialData, require_both_arms: bool = True) -> StratumIndex:
    treatment = np.asarray(data.treatment, dtype=np.int64)
    n_strata = data.n_strata
    order = np.argsort(data.strata, kind='stable')
    boundaries = np.searchsorted(data.strata[order], np.arange(1, n_strata + 2))
    members = tuple(order[boundaries[k]:boundaries[k + 1]] for k in range(n_strata))
    n_k = np.array([rows.size for rows in members], dtype=np.int64)
    n_k1 = np.array([int(treatment[rows].sum()) for rows in members], dtype=np.int64)
    n_k0 = n_k - n_k1
    if require_both_arms:
        for k in range(n_strata):
            if n_k1[k] == 0:
                raise ArmEmptyInStratum(k + 1, 1)
            if n_k0[k] == 0:
                raise ArmEmptyInStratum(k + 1, 0)
    return StratumIndex(members=members, n_k=n_k, n_k1=n_k1, n_k0=n_k0, n=data.n)


@dataclasses.dataclass(frozen=True, eq=False)
class ImbalanceDiagnostic:
    d_k: np.ndarray
    '''D_n[k] = sum over stratum k of (A_i - pi).'''

    max_scaled: float
    '''max_k |D_n[k]| / sqrt(n).'''

    @property
    def total(self) -> float:
        return float(self.d_k.sum())


def imbalance(data: TrialData, index: StratumIndex) -> ImbalanceDiagnostic:
    # pi as a rational keeps D_n[k] exact for allocations such as 2/3
    pi = Fraction(data.target_pi).limit_denominator(1_000_000)
    d_k = np.array([
        float(Fraction(int(n1)) - pi * int(nk))
        for n1, nk in zip(index.n_k1, index.n_k)
    ])
    max_scaled = float(np.max(np.abs(d_k), initial=0.0) / math.sqrt(max(index.n, 1)))
    return ImbalanceDiagnostic(d_k=d_k, max_scaled=max_scaled)
