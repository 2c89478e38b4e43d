'''Treatment assignment engines.

None of the functions here take outcomes, missingness masks or non-stratification covariates,
so an assignment can only depend on what the design is allowed to see.'''

import dataclasses
import enum
from fractions import Fraction
import logging
import math
import warnings

import numpy as np

from carmiss.errors import BlockPiIncompatible, CarmissAdvisory, ConfigError


logger = logging.getLogger(__name__)

# pi is usually typed with four decimals (0.6667); that is still an exact block
BLOCK_PI_TOLERANCE = 1e-3


class SchemeKind(enum.StrEnum):
    SIMPLE = 'simple'
    STRATIFIED_BLOCK = 'stratified-block'
    MINIMIZATION = 'minimization'


def as_fraction(pi: float) -> Fraction:
    return Fraction(pi).limit_denominator(1000)


def default_block_size(pi: float) -> int:
    '''Smallest exactly balanced even block: 4 at pi=1/2, 6 at pi=2/3.'''
    return 2 * as_fraction(pi).denominator


@dataclasses.dataclass(frozen=True)
class RandomizationScheme:
    kind: SchemeKind
    target_pi: float

    block_size: int | None = None
    '''Stratified block only; `None` picks `default_block_size(target_pi)`.'''

    biased_coin_prob: float = 0.75
    '''Minimization only: probability of taking the imbalance-minimizing arm.'''

    balance_weights: tuple[float, ...] | None = None
    '''Minimization only: one nonnegative weight per stratification variable (default all 1).'''

    def __post_init__(self):
        object.__setattr__(self, 'kind', SchemeKind(self.kind))
        if not 0.0 < self.target_pi < 1.0:
            raise ConfigError(f'target pi {self.target_pi} is not in (0, 1)')
        if self.kind == SchemeKind.STRATIFIED_BLOCK:
            if self.block_size is None:
                object.__setattr__(self, 'block_size', default_block_size(self.target_pi))
            if self.block_size < 1:
                raise ConfigError(f'block size must be positive, got {self.block_size}')
            treated = self.block_size * self.target_pi
            if abs(treated - round(treated)) > BLOCK_PI_TOLERANCE:
                raise BlockPiIncompatible(self.block_size, self.target_pi)
        if not 0.5 < self.biased_coin_prob <= 1.0:
            raise ConfigError(f'biased coin probability {self.biased_coin_prob} is not in (0.5, 1]')
        if self.balance_weights is not None and any(w < 0 for w in self.balance_weights):
            raise ConfigError('balance weights must be nonnegative')

    @property
    def treated_per_block(self) -> int:
        assert self.block_size is not None
        return round(self.block_size * self.target_pi)


def assign_simple(n: int, pi: float, rng: np.random.Generator) -> np.ndarray:
    return rng.binomial(1, pi, size=n).astype(np.int8)


def assign_stratified_block(
        strata: np.ndarray,
        scheme: RandomizationScheme,
        rng: np.random.Generator,
) -> np.ndarray:
    '''Permuted blocks within each stratum, in row order.

    Strata are visited in sorted label order so the stream consumption is fixed. A trailing
    partial block is the prefix of a permuted full block, i.e. a draw without replacement.'''
    strata = np.asarray(strata)
    assignment = np.zeros(strata.shape[0], dtype=np.int8)
    block_size = scheme.block_size
    assert block_size is not None
    template = np.zeros(block_size, dtype=np.int8)
    template[:scheme.treated_per_block] = 1
    for label in np.unique(strata):
        rows = np.flatnonzero(strata == label)
        n_blocks = math.ceil(rows.size / block_size)
        blocks = [rng.permutation(template) for _ in range(n_blocks)]
        sequence = np.concatenate(blocks) if blocks else template[:0]
        assignment[rows] = sequence[:rows.size]
    return assignment


def assign_minimization(
        factors: np.ndarray,
        scheme: RandomizationScheme,
        rng: np.random.Generator,
) -> np.ndarray:
    '''Pocock-Simon minimization over categorical stratification factors.

    `factors` is n x F, rows in arrival order. For every factor the imbalance of the unit's
    level after a hypothetical assignment `a` is |treated + a - pi * (total + 1)|; the weighted
    sum over factors is minimized with probability `biased_coin_prob`, ties go to Bernoulli(pi).'''
    factors = np.asarray(factors)
    if factors.ndim == 1:
        factors = factors[:, None]
    n, n_factors = factors.shape
    if n_factors < 1:
        raise ConfigError('minimization needs at least one stratification variable')
    weights = np.ones(n_factors) if scheme.balance_weights is None else np.asarray(scheme.balance_weights, dtype=float)
    if weights.shape != (n_factors,):
        raise ConfigError(f'{weights.size} balance weights for {n_factors} stratification variables')
    if scheme.biased_coin_prob == 1.0:
        warnings.warn(
            'minimization with biased coin probability 1 is deterministic after the first unit; '
            'allocations become predictable',
            CarmissAdvisory,
        )
    pi = scheme.target_pi
    p = scheme.biased_coin_prob
    codes = []
    for f in range(n_factors):
        _, inverse = np.unique(factors[:, f], return_inverse=True)
        codes.append(inverse.reshape(-1))
    codes = np.stack(codes, axis=1)
    n_levels = codes.max(axis=0) + 1 if n else np.zeros(n_factors, dtype=int)
    treated = [np.zeros(m) for m in n_levels]
    total = [np.zeros(m) for m in n_levels]

    assignment = np.zeros(n, dtype=np.int8)
    for i in range(n):
        levels = codes[i]
        imbalance = np.zeros(2)
        for arm in (0, 1):
            imbalance[arm] = sum(
                weights[f] * abs(treated[f][levels[f]] + arm - pi * (total[f][levels[f]] + 1))
                for f in range(n_factors)
            )
        u = rng.random()
        if math.isclose(imbalance[0], imbalance[1], rel_tol=0.0, abs_tol=1e-12):
            arm = int(u < pi)
        else:
            best = int(imbalance[1] < imbalance[0])
            arm = best if u < p else 1 - best
        assignment[i] = arm
        for f in range(n_factors):
            treated[f][levels[f]] += arm
            total[f][levels[f]] += 1
    return assignment


def assign(
        scheme: RandomizationScheme,
        strata: np.ndarray,
        factors: np.ndarray | None,
        rng: np.random.Generator,
) -> np.ndarray:
    '''Dispatches on the scheme kind. Minimization falls back to the strata as its only factor.'''
    match scheme.kind:
        case SchemeKind.SIMPLE:
            return assign_simple(len(strata), scheme.target_pi, rng)
        case SchemeKind.STRATIFIED_BLOCK:
            return assign_stratified_block(strata, scheme, rng)
        case SchemeKind.MINIMIZATION:
            return assign_minimization(strata if factors is None else factors, scheme, rng)
    raise AssertionError(scheme.kind)
