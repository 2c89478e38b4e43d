'''Average treatment effect estimation for covariate-adaptive randomized trials with
missing baseline covariates.'''

import dataclasses
import itertools
import logging
import warnings

import numpy as np
import pandas as pd

from carmiss.config import RunConfig, get_config
from carmiss.dataio import ColumnMap, load_csv, load_design_columns
from carmiss.dgp import DgpSpec
from carmiss.errors import CarmissAdvisory, ConfigError, MethodNotSupported
from carmiss.estimators import AdjustedEstimate, EstimatorSpec, estimate, recommend
from carmiss.missingness import process_mim
from carmiss.randomization import RandomizationScheme, assign
from carmiss.simulation import SimulationReport, default_estimators, run_monte_carlo
from carmiss.trial import (
    ImbalanceDiagnostic, TrialData,
    build_index, compact_labels, ensure_valid, imbalance,
)


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class AnalysisReport:
    config: RunConfig
    n: int
    stratum_labels: tuple
    imbalance: ImbalanceDiagnostic
    estimates: tuple[AdjustedEstimate, ...]


@dataclasses.dataclass(frozen=True, eq=False)
class RandomizationResult:
    frame: pd.DataFrame
    '''The input table with the treatment column appended.'''

    treatment: np.ndarray
    stratum_labels: tuple
    n_k: np.ndarray
    n_k1: np.ndarray
    imbalance: ImbalanceDiagnostic


def analysis_specs(config: RunConfig, data: TrialData) -> list[EstimatorSpec]:
    '''Every requested method x missingness x scope combination, in request order.

    `auto` contributes the single recommended estimator for this data.'''
    options = config.analyze
    if 'mpm' in options.missing:
        raise MethodNotSupported('mpm', 'the missing pattern method needs many units per missingness pattern')
    specs: list[EstimatorSpec] = []
    for method in options.methods:
        if method == 'auto':
            q = process_mim(data).q if data.p else 0
            chosen = recommend(config.pi, data.n, q)
            logger.info('auto method: %s', chosen.label)
            specs.append(dataclasses.replace(
                chosen, df_adjust=config.df_adjust, variance=options.variance,
            ))
            continue
        for missing, scope in itertools.product(options.missing, options.scopes):
            specs.append(EstimatorSpec(
                method, missing, scope,
                pi=config.pi, df_adjust=config.df_adjust, variance=options.variance,
            ))
    return list(dict.fromkeys(specs))


def run_analysis(config: RunConfig | None = None) -> AnalysisReport:
    config = config or get_config()
    source = config.data
    assert source.path is not None
    data = load_csv(
        source.path,
        ColumnMap(source.outcome_col, source.treat_col, source.stratum_col, tuple(source.covariate_cols)),
        config.pi,
    )
    for advisory in ensure_valid(data):
        warnings.warn(advisory, CarmissAdvisory)
    index = build_index(data)
    estimates = tuple(
        estimate(data, spec, config.level)
        for spec in analysis_specs(config, data)
    )
    return AnalysisReport(
        config=config,
        n=data.n,
        stratum_labels=data.stratum_labels,
        imbalance=imbalance(data, index),
        estimates=estimates,
    )


def dgp_spec(config: RunConfig) -> DgpSpec:
    sim = config.simulation
    scheme = RandomizationScheme(
        sim.scheme, config.pi,
        block_size=sim.block_size,
        biased_coin_prob=sim.biased_coin_prob,
    )
    return DgpSpec(
        model=sim.model,
        n=sim.n,
        pi=config.pi,
        scheme=scheme,
        p_total=sim.p,
        snr1=sim.snr1,
        snr0=sim.snr0,
        snr_def=sim.snr_def,
        seed=config.seed,
        calibration_draws=sim.calibration_draws,
        oracle_draws=sim.oracle_draws,
    )


def run_simulation(config: RunConfig | None = None) -> SimulationReport:
    config = config or get_config()
    spec = dgp_spec(config)
    estimators = [
        dataclasses.replace(estimator, df_adjust=config.df_adjust)
        for estimator in default_estimators(config.pi, config.simulation.include_cc)
    ]
    logger.info(
        'simulating model %d, n=%d, pi=%g, %s, %d replications of %d estimators',
        spec.model, spec.n, spec.pi, config.simulation.scheme, config.simulation.reps, len(estimators),
    )
    return run_monte_carlo(spec, estimators, config.simulation.reps, config.level, config.threads)


def run_randomization(config: RunConfig | None = None) -> RandomizationResult:
    '''Allocates the units of a CSV in row order.'''
    config = config or get_config()
    options = config.randomize
    assert config.data.path is not None
    frame, labels, factors = load_design_columns(config.data.path, config.data.stratum_col, options.factor_cols)
    if options.treatment_col in frame.columns:
        raise ConfigError(
            f'column {options.treatment_col!r} already exists; choose another with --treat-col'
        )
    scheme = RandomizationScheme(
        options.scheme, config.pi,
        block_size=options.block_size,
        biased_coin_prob=options.biased_coin_prob,
    )
    strata, levels = compact_labels(labels)
    treatment = assign(scheme, strata, factors, np.random.default_rng(config.seed))
    allocated = TrialData.from_arrays(np.zeros(len(frame)), treatment, strata, target_pi=config.pi)
    index = build_index(allocated, require_both_arms=False)
    out = frame.copy()
    out[options.treatment_col] = [str(int(a)) for a in treatment]
    return RandomizationResult(
        frame=out,
        treatment=treatment,
        stratum_labels=tuple(levels),
        n_k=index.n_k,
        n_k1=index.n_k1,
        imbalance=imbalance(allocated, index),
    )
