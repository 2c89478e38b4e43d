'''Variance estimators and normal confidence intervals.'''

import dataclasses
import enum
import logging
import math

import numpy as np
import scipy.stats

from carmiss.errors import DfNonPositive
from carmiss.regress import RegressionFit
from carmiss.trial import StratumIndex


logger = logging.getLogger(__name__)


class DfAdjust(enum.StrEnum):
    AUTO = 'auto'
    ON = 'on'
    OFF = 'off'


class VarianceMethod(enum.StrEnum):
    AUTO = 'auto'
    OLS = 'ols'
    PLUG_IN = 'plug-in'


def resolve_df_adjust(mode: DfAdjust | str | bool, q: int, n: int) -> bool:
    '''`auto` adjusts when the covariate dimension is large relative to n (q >= 5 or n < 400).'''
    if isinstance(mode, bool):
        return mode
    match DfAdjust(mode):
        case DfAdjust.ON:
            return True
        case DfAdjust.OFF:
            return False
        case DfAdjust.AUTO:
            return q >= 5 or n < 400
    raise AssertionError(mode)


@dataclasses.dataclass(frozen=True)
class StratumVariance:
    stratum: int
    treated_term: float
    '''(p_n[k] / den_[k]1) * sum over treated of (r_i - rbar_[k]1)^2, before the 1/pi factor.'''

    control_term: float
    heterogeneity_term: float
    '''p_n[k] * ((rbar_[k]1 - rbar_1) - (rbar_[k]0 - rbar_0))^2.'''

    denominators: tuple[int, int]
    '''(den_[k]0, den_[k]1).'''


@dataclasses.dataclass(frozen=True)
class VarianceComponents:
    varsigma_r2: float
    varsigma_H2: float
    per_stratum: tuple[StratumVariance, ...]
    df_adjusted: bool

    @property
    def total(self) -> float:
        return self.varsigma_r2 + self.varsigma_H2


def plug_in_variance(
        residuals: np.ndarray,
        treatment: np.ndarray,
        index: StratumIndex,
        pi: float,
        df_adjust: bool = False,
        param_counts: np.ndarray | None = None,
) -> VarianceComponents:
    '''Nonparametric plug-in variance of an adjusted estimator from its residuals.

    `param_counts[k-1, a]` is the regressor dimension p_[k]a removed from n_[k]a when
    `df_adjust` is set.'''
    residuals = np.asarray(residuals, dtype=np.float64)
    treatment = np.asarray(treatment)
    treated = treatment == 1
    rbar_1 = residuals[treated].mean()
    rbar_0 = residuals[~treated].mean()
    p_k = index.p_k
    if df_adjust:
        assert param_counts is not None, 'degrees-of-freedom adjustment needs parameter counts'
        param_counts = np.asarray(param_counts)

    pieces = []
    r_treated = 0.0
    r_control = 0.0
    h_total = 0.0
    for k, rows in enumerate(index.members, start=1):
        arm = treatment[rows]
        r1 = residuals[rows[arm == 1]]
        r0 = residuals[rows[arm == 0]]
        den = [r0.size, r1.size]
        if df_adjust:
            for a in (0, 1):
                den[a] -= int(param_counts[k - 1, a])
                if den[a] <= 0:
                    raise DfNonPositive(k, a, (r0, r1)[a].size, int(param_counts[k - 1, a]))
        mean_1 = r1.mean()
        mean_0 = r0.mean()
        treated_term = p_k[k - 1] * float(np.sum((r1 - mean_1) ** 2)) / den[1]
        control_term = p_k[k - 1] * float(np.sum((r0 - mean_0) ** 2)) / den[0]
        h_term = p_k[k - 1] * ((mean_1 - rbar_1) - (mean_0 - rbar_0)) ** 2
        r_treated += treated_term
        r_control += control_term
        h_total += h_term
        pieces.append(StratumVariance(k, treated_term, control_term, float(h_term), (den[0], den[1])))
    return VarianceComponents(
        varsigma_r2=r_treated / pi + r_control / (1.0 - pi),
        varsigma_H2=float(h_total),
        per_stratum=tuple(pieces),
        df_adjusted=df_adjust,
    )


def ols_variance_fisher(fit: RegressionFit, n: int, column: int = 1) -> float:
    '''n times the classical OLS variance of the coefficient on design column `column`.'''
    position = fit.position(column)
    assert position is not None, f'column {column} was dropped from the fit'
    s2 = fit.rss / fit.dof
    return n * s2 * float(fit.xtx_inverse[position, position])


def z_value(level: float) -> float:
    return float(scipy.stats.norm.ppf((1.0 + level) / 2.0))


def confidence_interval(tau_hat: float, sigma2_hat: float, n: int, level: float = 0.95) -> tuple[float, float]:
    assert sigma2_hat >= 0.0 or math.isnan(sigma2_hat), sigma2_hat
    assert 0.0 < level < 1.0, level
    half_width = z_value(level) * math.sqrt(sigma2_hat / n)
    return tau_hat - half_width, tau_hat + half_width
