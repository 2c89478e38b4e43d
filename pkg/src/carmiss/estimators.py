'''Regression-adjusted ATE estimators.

Three regressions (Fisher, Lin, ToM) at two scopes (stratum-common, stratum-specific) on top of
the missingness processors, plus the two no-covariate benchmarks. Lin and ToM each have two
computation paths: the regression display fitted through `regress.wls_fit`, and a cheaper closed
form. The closed form is the release path; with cross-checking on (`set_cross_check` or the
`CARMISS_CROSS_CHECK` environment variable) both are computed and must agree.'''

import dataclasses
import enum
import logging
import math
import os
import warnings

import numpy as np

from carmiss.errors import (
    CarmissAdvisory, ConfigError, DesignDegenerate, InsufficientArmRows,
    StratumTooSmall, VarianceNotValid,
)
from carmiss.missingness import ImputationPolicy, Missingness, ProcessedCovariates, process
from carmiss.regress import RegressionFit, wls_fit
from carmiss.trial import StratumIndex, TrialData, build_index, imbalance
from carmiss.variance import (
    DfAdjust, VarianceComponents, VarianceMethod,
    confidence_interval, ols_variance_fisher, plug_in_variance, resolve_df_adjust,
)


logger = logging.getLogger(__name__)

CROSS_CHECK_TOLERANCE = 1e-8

_cross_check = os.environ.get('CARMISS_CROSS_CHECK', '') not in ('', '0')


def set_cross_check(enabled: bool):
    global _cross_check
    _cross_check = enabled


def get_cross_check() -> bool:
    return _cross_check


class Regression(enum.StrEnum):
    FISHER = 'fisher'
    LIN = 'lin'
    TOM = 'tom'

    @property
    def letter(self) -> str:
        return {'fisher': 'F', 'lin': 'L', 'tom': 'T'}[self.value]


class Scope(enum.StrEnum):
    COMMON = 'common'
    STRATUM_SPECIFIC = 'ss'


def is_equal_allocation(pi: float) -> bool:
    return math.isclose(pi, 0.5, rel_tol=0.0, abs_tol=1e-9)


@dataclasses.dataclass(frozen=True)
class EstimatorSpec:
    regression: Regression
    missingness: Missingness
    scope: Scope = Scope.COMMON

    pi: float | None = None
    '''Design target pi; `None` takes the data's target.'''

    df_adjust: DfAdjust | bool = DfAdjust.AUTO

    imputation: ImputationPolicy | None = None
    '''`None` uses the processor default (observed mean for imp, 0 for mim).'''

    variance: VarianceMethod = VarianceMethod.AUTO

    def __post_init__(self):
        object.__setattr__(self, 'regression', Regression(self.regression))
        object.__setattr__(self, 'missingness', Missingness(self.missingness))
        object.__setattr__(self, 'scope', Scope(self.scope))
        object.__setattr__(self, 'variance', VarianceMethod(self.variance))
        if not isinstance(self.df_adjust, bool):
            object.__setattr__(self, 'df_adjust', DfAdjust(self.df_adjust))
        if self.missingness == Missingness.NONE:
            if self.regression == Regression.TOM or self.scope != Scope.COMMON:
                raise ConfigError(
                    'estimators without covariates are only the Fisher and Lin benchmarks '
                    '(stratum-common scope)'
                )
        if self.missingness == Missingness.CC and self.scope != Scope.COMMON:
            raise ConfigError('complete-case analysis is only available at stratum-common scope')
        if self.pi is not None and not 0.0 < self.pi < 1.0:
            raise ConfigError(f'target pi {self.pi} is not in (0, 1)')

    @property
    def is_benchmark(self) -> bool:
        return self.missingness == Missingness.NONE

    @property
    def label(self) -> str:
        parts = [self.regression.letter]
        if not self.is_benchmark:
            parts.append(str(self.missingness))
        if self.scope == Scope.STRATUM_SPECIFIC:
            parts.append('ss')
        return 'tau_' + ','.join(parts)


def benchmark_spec(pi: float, **kwargs) -> EstimatorSpec:
    '''Fisher's benchmark at equal allocation, Lin's otherwise.'''
    regression = Regression.FISHER if is_equal_allocation(pi) else Regression.LIN
    return EstimatorSpec(regression, Missingness.NONE, pi=pi, **kwargs)


@dataclasses.dataclass(frozen=True)
class EstimateDiagnostics:
    n_used: int
    q: int
    '''Adjustment columns handed to the regression (before the rank guard).'''

    design_columns: tuple[str, ...]
    dropped_columns: tuple[str, ...]
    '''Columns the rank guard removed in at least one fit.'''

    arm_counts: tuple[tuple[int, int], ...]
    '''(n_[k]0, n_[k]1) per stratum.'''

    max_imbalance: float
    '''max_k |D_n[k]| / sqrt(n).'''

    imbalance_by_stratum: tuple[float, ...]
    variance_method: VarianceMethod
    df_adjusted: bool
    reduced_to_benchmark: bool = False


@dataclasses.dataclass(frozen=True)
class AdjustedEstimate:
    tau_hat: float
    sigma2_hat: float
    '''Asymptotic variance estimate, scaled by n.'''

    se: float
    ci: tuple[float, float]
    level: float
    n: int
    spec: EstimatorSpec
    coefficients: dict[str, np.ndarray]
    diagnostics: EstimateDiagnostics
    variance_components: VarianceComponents | None = None
    warnings: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return self.spec.label


@dataclasses.dataclass
class _Fit:
    tau: float
    sigma2: float
    components: VarianceComponents | None
    coefficients: dict[str, np.ndarray]
    dropped: set[int]
    variance_method: VarianceMethod
    df_adjusted: bool


###############
### Helpers ###
###############

def _agree(what: str, release: float, display: float):
    if not abs(release - display) <= CROSS_CHECK_TOLERANCE * max(1.0, abs(release)):
        raise AssertionError(f'{what}: closed form {release!r} != regression display {display!r}')


def _dummies(strata: np.ndarray, n_strata: int) -> np.ndarray:
    '''Indicators of strata 1..K-1; stratum K is the reference level.'''
    return (strata[:, None] == np.arange(1, n_strata)[None, :]).astype(np.float64)


def _cell_means(values: np.ndarray, index: StratumIndex, treatment: np.ndarray):
    '''Per-stratum means of `values` over the stratum, its treated and its control units.'''
    values = values.reshape(values.shape[0], -1)
    overall = np.empty((index.n_strata, values.shape[1]))
    treated = np.empty_like(overall)
    control = np.empty_like(overall)
    for k, rows in enumerate(index.members):
        arm = treatment[rows]
        overall[k] = values[rows].mean(axis=0)
        treated[k] = values[rows[arm == 1]].mean(axis=0)
        control[k] = values[rows[arm == 0]].mean(axis=0)
    return overall, treated, control


def _cell_demean(values: np.ndarray, index: StratumIndex, treatment: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    for rows in index.members:
        for arm in (0, 1):
            cell = rows[treatment[rows] == arm]
            out[cell] -= out[cell].mean(axis=0)
    return out


def tom_weights(treatment: np.ndarray, pi: float) -> np.ndarray:
    '''A / pi^2 + (1 - A) / (1 - pi)^2.'''
    return np.where(treatment == 1, 1.0 / pi ** 2, 1.0 / (1.0 - pi) ** 2)


def _resolve_variance(regression: Regression, requested: VarianceMethod, pi: float) -> VarianceMethod:
    if requested == VarianceMethod.AUTO:
        return VarianceMethod.OLS if regression == Regression.FISHER else VarianceMethod.PLUG_IN
    if is_equal_allocation(pi):
        return requested
    if requested == VarianceMethod.OLS and regression != Regression.FISHER:
        raise VarianceNotValid(
            f'the OLS variance of {regression} regression is not consistent at pi={pi}; '
            'use the plug-in variance'
        )
    if requested == VarianceMethod.PLUG_IN and regression == Regression.FISHER:
        raise VarianceNotValid(
            f'the plug-in variance does not cover Fisher regression at pi={pi}; use the OLS variance'
        )
    return requested


def _advise_fisher(pi: float):
    if not is_equal_allocation(pi):
        warnings.warn(
            f'Fisher regression at unequal allocation (pi={pi}) may be less efficient than the '
            'unadjusted benchmark; ToM regression is recommended for unequal allocation and '
            'Fisher regression for equal allocation',
            CarmissAdvisory,
        )


def _plug_in(
        residuals: np.ndarray,
        data: TrialData,
        index: StratumIndex,
        pi: float,
        df_adjust: bool,
        param_counts: np.ndarray,
) -> VarianceComponents:
    return plug_in_variance(residuals, data.treatment, index, pi, df_adjust, param_counts)


def _check_arm_rows(data: TrialData, needed: int):
    for arm in (1, 0):
        have = int(np.sum(data.treatment == arm))
        if have < needed:
            raise InsufficientArmRows(None, arm, needed, have)


def _check_stratum_rows(index: StratumIndex, q: int):
    needed = q + 2
    for k in range(index.n_strata):
        for arm, have in ((1, index.n_k1[k]), (0, index.n_k0[k])):
            if have < needed:
                raise StratumTooSmall(k + 1, arm, needed, int(have))


#######################
### Stratum-common ###
#######################

def _fisher_common(data: TrialData, index: StratumIndex, u: np.ndarray, pi: float,
                   variance: VarianceMethod, df_adjust: bool) -> _Fit:
    n = data.n
    a = data.treatment.astype(np.float64)
    design = np.column_stack([np.ones(n), a, _dummies(data.strata, index.n_strata), u])
    fit = wls_fit(design, data.outcomes)
    if fit.position(1) is None:
        raise DesignDegenerate('the treatment indicator is collinear with the stratum dummies and covariates')
    tau = float(fit.coefficients[fit.position(1)])
    offset = 1 + index.n_strata
    beta = fit.full_coefficients()[offset:]
    dropped = {j - offset for j in fit.dropped_columns if j >= offset}
    if variance == VarianceMethod.OLS:
        return _Fit(tau, ols_variance_fisher(fit, n, 1), None, {'pooled': beta}, dropped, variance, False)
    q_kept = u.shape[1] - len(dropped)
    counts = np.full((index.n_strata, 2), index.n_strata + q_kept)
    components = _plug_in(data.outcomes - u @ beta, data, index, pi, df_adjust, counts)
    return _Fit(tau, components.total, components, {'pooled': beta}, dropped, variance, df_adjust)


def _lin_display(data: TrialData, index: StratumIndex, u: np.ndarray) -> RegressionFit:
    n = data.n
    a = data.treatment.astype(np.float64)
    dummies = _dummies(data.strata, index.n_strata)
    p_k = index.p_k[:-1]
    design = np.column_stack([
        np.ones(n), a, dummies, a[:, None] * (dummies - p_k[None, :]),
        u, a[:, None] * (u - u.mean(axis=0)[None, :]),
    ])
    return wls_fit(design, data.outcomes)


def _lin_common(data: TrialData, index: StratumIndex, u: np.ndarray, pi: float,
                variance: VarianceMethod, df_adjust: bool) -> _Fit:
    n_strata = index.n_strata
    q = u.shape[1]
    _check_arm_rows(data, n_strata + q + 1)
    dummies = _dummies(data.strata, n_strata)
    beta = {}
    ranks = {}
    dropped: set[int] = set()
    for arm in (1, 0):
        rows = data.treatment == arm
        design = np.column_stack([np.ones(int(rows.sum())), dummies[rows], u[rows]])
        fit = wls_fit(design, data.outcomes[rows])
        beta[arm] = fit.full_coefficients()[n_strata:]
        ranks[arm] = fit.rank
        dropped |= {j - n_strata for j in fit.dropped_columns if j >= n_strata}
    y_all, y1, y0 = _cell_means(data.outcomes, index, data.treatment)
    u_all, u1, u0 = _cell_means(u, index, data.treatment)
    p_k = index.p_k
    tau = float(np.sum(p_k * (
        (y1[:, 0] - (u1 - u_all) @ beta[1]) - (y0[:, 0] - (u0 - u_all) @ beta[0])
    )))

    display = None
    if _cross_check or variance == VarianceMethod.OLS:
        display = _lin_display(data, index, u)
        assert display.position(1) is not None
        if _cross_check:
            _agree('Lin regression', tau, float(display.coefficients[display.position(1)]))
    coefficients = {'treated': beta[1], 'control': beta[0]}
    if variance == VarianceMethod.OLS:
        assert display is not None
        return _Fit(tau, ols_variance_fisher(display, data.n, 1), None, coefficients, dropped, variance, False)
    beta_l = (1.0 - pi) * beta[1] + pi * beta[0]
    counts = np.empty((n_strata, 2))
    counts[:, 0] = ranks[0]
    counts[:, 1] = ranks[1]
    components = _plug_in(data.outcomes - u @ beta_l, data, index, pi, df_adjust, counts)
    return _Fit(tau, components.total, components, coefficients, dropped, variance, df_adjust)


def _tom_display(data: TrialData, index: StratumIndex, u: np.ndarray, pi: float) -> RegressionFit:
    n = data.n
    a = data.treatment.astype(np.float64)
    centered = _dummies(data.strata, index.n_strata) - index.p_k[None, :-1]
    design = np.column_stack([np.ones(n), a, centered, a[:, None] * centered, u])
    return wls_fit(design, data.outcomes, tom_weights(data.treatment, pi))


def tom_closed_form(data: TrialData, index: StratumIndex, u: np.ndarray, pi: float) -> tuple[float, RegressionFit]:
    '''ToM estimate as the benchmark minus beta_T' times the benchmark applied to U.

    beta_T is the weighted regression of cell-demeaned outcomes on cell-demeaned covariates.'''
    weights = tom_weights(data.treatment, pi)
    fit = wls_fit(
        _cell_demean(u, index, data.treatment),
        _cell_demean(data.outcomes, index, data.treatment),
        weights,
        reference=u,
    )
    beta = fit.full_coefficients()
    _, y1, y0 = _cell_means(data.outcomes, index, data.treatment)
    _, u1, u0 = _cell_means(u, index, data.treatment)
    p_k = index.p_k
    tau_l = float(np.sum(p_k * (y1[:, 0] - y0[:, 0])))
    tau_l_u = p_k @ (u1 - u0)
    return tau_l - float(beta @ tau_l_u), fit


def _tom_common(data: TrialData, index: StratumIndex, u: np.ndarray, pi: float,
                variance: VarianceMethod, df_adjust: bool) -> _Fit:
    tau, fit = tom_closed_form(data, index, u, pi)
    beta = fit.full_coefficients()
    dropped = set(fit.dropped_columns)
    display = None
    if _cross_check or variance == VarianceMethod.OLS:
        display = _tom_display(data, index, u, pi)
        assert display.position(1) is not None
        if _cross_check:
            _agree('ToM regression', tau, float(display.coefficients[display.position(1)]))
    if variance == VarianceMethod.OLS:
        assert display is not None
        return _Fit(tau, ols_variance_fisher(display, data.n, 1), None, {'pooled': beta}, dropped, variance, False)
    counts = np.full((index.n_strata, 2), index.n_strata + fit.rank)
    components = _plug_in(data.outcomes - u @ beta, data, index, pi, df_adjust, counts)
    return _Fit(tau, components.total, components, {'pooled': beta}, dropped, variance, df_adjust)


#########################
### Stratum-specific ###
#########################

def _stratum_fits(data: TrialData, index: StratumIndex, u: np.ndarray, pi: float,
                  regression: Regression, variance: VarianceMethod, df_adjust: bool) -> _Fit:
    n_strata = index.n_strata
    q = u.shape[1]
    treatment = data.treatment
    p_k = index.p_k
    taus = np.empty(n_strata)
    ols = np.empty(n_strata)
    residuals = np.empty(data.n)
    counts = np.empty((n_strata, 2))
    coefficients: dict[str, np.ndarray] = {}
    dropped: set[int] = set()
    for k, rows in enumerate(index.members, start=1):
        y = data.outcomes[rows]
        a = treatment[rows].astype(np.float64)
        u_k = u[rows]
        n_k = rows.size
        display: RegressionFit | None = None
        match regression:
            case Regression.FISHER:
                display = wls_fit(np.column_stack([np.ones(n_k), a, u_k]), y)
                if display.position(1) is None:
                    raise DesignDegenerate(f'treatment indicator degenerate in stratum {k}')
                taus[k - 1] = display.coefficients[display.position(1)]
                beta = display.full_coefficients()[2:]
                dropped |= {j - 2 for j in display.dropped_columns if j >= 2}
                counts[k - 1] = 2 + q - len({j for j in display.dropped_columns if j >= 2})
                coefficients[f'[{k}]'] = beta
            case Regression.LIN:
                arm_beta = {}
                for arm in (1, 0):
                    cell = a == arm
                    fit = wls_fit(np.column_stack([np.ones(int(cell.sum())), u_k[cell]]), y[cell])
                    arm_beta[arm] = fit.full_coefficients()[1:]
                    counts[k - 1, arm] = fit.rank
                    dropped |= {j - 1 for j in fit.dropped_columns if j >= 1}
                u_bar = u_k.mean(axis=0)
                u1 = u_k[a == 1].mean(axis=0)
                u0 = u_k[a == 0].mean(axis=0)
                taus[k - 1] = (
                    (y[a == 1].mean() - (u1 - u_bar) @ arm_beta[1])
                    - (y[a == 0].mean() - (u0 - u_bar) @ arm_beta[0])
                )
                beta = (1.0 - pi) * arm_beta[1] + pi * arm_beta[0]
                coefficients[f'[{k}] treated'] = arm_beta[1]
                coefficients[f'[{k}] control'] = arm_beta[0]
                if _cross_check or variance == VarianceMethod.OLS:
                    display = wls_fit(np.column_stack([np.ones(n_k), a, u_k, a[:, None] * (u_k - u_bar)]), y)
                    if _cross_check:
                        _agree(f'Lin regression in stratum {k}', taus[k - 1], display.coefficients[display.position(1)])
            case Regression.TOM:
                weights = tom_weights(treatment[rows], pi)
                demeaned_y = y.copy()
                demeaned_u = u_k.copy()
                for arm in (0, 1):
                    cell = a == arm
                    demeaned_y[cell] -= y[cell].mean()
                    demeaned_u[cell] -= u_k[cell].mean(axis=0)
                fit = wls_fit(demeaned_u, demeaned_y, weights, reference=u_k)
                beta = fit.full_coefficients()
                dropped |= set(fit.dropped_columns)
                counts[k - 1] = 1 + fit.rank
                taus[k - 1] = (
                    (y[a == 1].mean() - y[a == 0].mean())
                    - beta @ (u_k[a == 1].mean(axis=0) - u_k[a == 0].mean(axis=0))
                )
                coefficients[f'[{k}]'] = beta
                if _cross_check or variance == VarianceMethod.OLS:
                    display = wls_fit(np.column_stack([np.ones(n_k), a, u_k]), y, weights)
                    if _cross_check:
                        _agree(f'ToM regression in stratum {k}', taus[k - 1], display.coefficients[display.position(1)])
        if variance == VarianceMethod.OLS:
            assert display is not None
            ols[k - 1] = ols_variance_fisher(display, n_k, 1)
        residuals[rows] = y - u_k @ beta

    tau = float(p_k @ taus)
    if variance == VarianceMethod.OLS:
        return _Fit(tau, float(p_k @ ols), None, coefficients, dropped, variance, False)
    components = _plug_in(residuals, data, index, pi, df_adjust, counts)
    return _Fit(tau, components.total, components, coefficients, dropped, variance, df_adjust)


##################
### Public API ###
##################

def _finish(
        fit: _Fit,
        data: TrialData,
        index: StratumIndex,
        processed: ProcessedCovariates,
        spec: EstimatorSpec,
        level: float,
        advisories: tuple[str, ...] = (),
) -> AdjustedEstimate:
    n = data.n
    sigma2 = max(fit.sigma2, 0.0)
    diagnostic = imbalance(data, index)
    names = processed.names(data.covariate_names)
    reduced = spec.missingness == Missingness.CCOV and processed.q == 0
    if reduced:
        warnings.warn(
            'no covariate is fully observed; the complete-covariate estimator equals its benchmark',
            CarmissAdvisory,
        )
    return AdjustedEstimate(
        tau_hat=fit.tau,
        sigma2_hat=sigma2,
        se=math.sqrt(sigma2 / n),
        ci=confidence_interval(fit.tau, sigma2, n, level),
        level=level,
        n=n,
        spec=spec,
        coefficients=fit.coefficients,
        diagnostics=EstimateDiagnostics(
            n_used=n,
            q=processed.q,
            design_columns=tuple(names),
            dropped_columns=tuple(names[j] for j in sorted(fit.dropped)),
            arm_counts=tuple((int(n0), int(n1)) for n0, n1 in zip(index.n_k0, index.n_k1)),
            max_imbalance=diagnostic.max_scaled,
            imbalance_by_stratum=tuple(float(d) for d in diagnostic.d_k),
            variance_method=fit.variance_method,
            df_adjusted=fit.df_adjusted,
            reduced_to_benchmark=reduced,
        ),
        variance_components=fit.components,
        warnings=advisories,
    )


def _common_spec(regression: Regression, processed: ProcessedCovariates, pi: float,
                 df_adjust, variance, scope=Scope.COMMON) -> EstimatorSpec:
    return EstimatorSpec(regression, processed.method, scope, pi=pi, df_adjust=df_adjust, variance=variance)


def _common(regression: Regression, data: TrialData, processed: ProcessedCovariates, pi: float,
            level: float, df_adjust, variance, spec: EstimatorSpec | None) -> AdjustedEstimate:
    spec = spec or _common_spec(regression, processed, pi, df_adjust, variance)
    index = build_index(data)
    method = _resolve_variance(regression, spec.variance, pi)
    adjust = resolve_df_adjust(spec.df_adjust, processed.q, data.n)
    u = processed.design
    match regression:
        case Regression.FISHER:
            _advise_fisher(pi)
            fit = _fisher_common(data, index, u, pi, method, adjust)
        case Regression.LIN:
            fit = _lin_common(data, index, u, pi, method, adjust)
        case Regression.TOM:
            fit = _tom_common(data, index, u, pi, method, adjust)
    return _finish(fit, data, index, processed, spec, level)


def fit_fisher(data: TrialData, processed: ProcessedCovariates, pi: float, level: float = 0.95,
               df_adjust: DfAdjust | bool = DfAdjust.AUTO, variance: VarianceMethod = VarianceMethod.AUTO,
               spec: EstimatorSpec | None = None) -> AdjustedEstimate:
    '''OLS of Y on [1, A, K-1 stratum dummies, U]; tau is the coefficient of A.'''
    return _common(Regression.FISHER, data, processed, pi, level, df_adjust, variance, spec)


def fit_lin(data: TrialData, processed: ProcessedCovariates, pi: float, level: float = 0.95,
            df_adjust: DfAdjust | bool = DfAdjust.AUTO, variance: VarianceMethod = VarianceMethod.AUTO,
            spec: EstimatorSpec | None = None) -> AdjustedEstimate:
    '''Separate-arm regressions on [1, stratum dummies, U], combined with stratum proportions.'''
    return _common(Regression.LIN, data, processed, pi, level, df_adjust, variance, spec)


def fit_tom(data: TrialData, processed: ProcessedCovariates, pi: float, level: float = 0.95,
            df_adjust: DfAdjust | bool = DfAdjust.AUTO, variance: VarianceMethod = VarianceMethod.AUTO,
            spec: EstimatorSpec | None = None) -> AdjustedEstimate:
    '''Tyranny-of-the-minority weighted regression with pooled covariate slopes.'''
    return _common(Regression.TOM, data, processed, pi, level, df_adjust, variance, spec)


def fit_stratum_specific(data: TrialData, processed: ProcessedCovariates, pi: float,
                         regression: Regression | str, level: float = 0.95,
                         df_adjust: DfAdjust | bool = DfAdjust.AUTO,
                         variance: VarianceMethod = VarianceMethod.AUTO,
                         spec: EstimatorSpec | None = None) -> AdjustedEstimate:
    '''Runs `regression` inside every stratum and weights the stratum effects by p_n[k].'''
    regression = Regression(regression)
    spec = spec or _common_spec(regression, processed, pi, df_adjust, variance, Scope.STRATUM_SPECIFIC)
    index = build_index(data)
    _check_stratum_rows(index, processed.q)
    method = _resolve_variance(regression, spec.variance, pi)
    adjust = resolve_df_adjust(spec.df_adjust, processed.q, data.n)
    if regression == Regression.FISHER:
        _advise_fisher(pi)
    fit = _stratum_fits(data, index, processed.design, pi, regression, method, adjust)
    return _finish(fit, data, index, processed, spec, level)


def fit_benchmark(data: TrialData, pi: float, which: Regression | str, level: float = 0.95,
                  df_adjust: DfAdjust | bool = DfAdjust.AUTO,
                  variance: VarianceMethod = VarianceMethod.AUTO) -> AdjustedEstimate:
    '''The no-covariate Fisher or Lin estimator.'''
    which = Regression(which)
    if which == Regression.TOM:
        raise ConfigError('benchmarks are the Fisher and Lin estimators without covariates')
    _, processed = process(data, Missingness.NONE)
    return _common(which, data, processed, pi, level, df_adjust, variance, None)


def estimate(
        data: TrialData,
        spec: EstimatorSpec,
        level: float = 0.95,
        processed: ProcessedCovariates | None = None,
) -> AdjustedEstimate:
    '''Processes the covariates as `spec` says and fits the requested estimator.

    Advisories raised while fitting are both emitted as `CarmissAdvisory` warnings and stored on
    the returned estimate.'''
    pi = data.target_pi if spec.pi is None else spec.pi
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', CarmissAdvisory)
        if spec.missingness == Missingness.CC:
            warnings.warn(
                'complete-case analysis deletes units with any missing covariate and is biased '
                'whenever missingness is related to the outcomes; it is not recommended and is '
                'reported for comparison only',
                CarmissAdvisory,
            )
        if processed is None or spec.missingness == Missingness.CC:
            data, processed = process(data, spec.missingness, spec.imputation)
        if spec.missingness == Missingness.MIM and processed.q > data.n / 20:
            warnings.warn(
                f'MIM design has {processed.q} columns for n={data.n}; with many covariates '
                'relative to n, IMP may perform better',
                CarmissAdvisory,
            )
        if spec.scope == Scope.STRATUM_SPECIFIC:
            result = fit_stratum_specific(data, processed, pi, spec.regression, level, spec=spec)
        else:
            result = _common(spec.regression, data, processed, pi, level, spec.df_adjust, spec.variance, spec)
    advisories = []
    for warning in caught:
        if issubclass(warning.category, CarmissAdvisory):
            advisories.append(str(warning.message))
        warnings.warn_explicit(warning.message, warning.category, warning.filename, warning.lineno)
    return dataclasses.replace(result, warnings=tuple(dict.fromkeys(advisories)))


def recommend(pi: float, n: int, q: int, large_n: int = 1000, small_n: int = 400) -> EstimatorSpec:
    '''Practical default: Fisher at equal allocation and ToM otherwise; stratum-specific MIM for
    large samples, stratum-common IMP for small ones.

    `q` is the column count of the MIM design; above n/20 IMP replaces MIM.'''
    regression = Regression.FISHER if is_equal_allocation(pi) else Regression.TOM
    if n < small_n:
        return EstimatorSpec(regression, Missingness.IMP, Scope.COMMON, pi=pi)
    missingness = Missingness.MIM if q <= n / 20 else Missingness.IMP
    scope = Scope.STRATUM_SPECIFIC if n >= large_n else Scope.COMMON
    return EstimatorSpec(regression, missingness, scope, pi=pi)
