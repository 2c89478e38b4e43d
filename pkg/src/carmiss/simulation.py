'''Monte Carlo harness: replicate a design, apply every estimator, aggregate the metrics.'''

import concurrent.futures
import dataclasses
import importlib.metadata
import logging
import math
import time
import typing
import warnings

import numpy as np

from carmiss.dgp import DgpSpec, generate, true_tau, true_tau_complete_cases
from carmiss.errors import CarmissAdvisory, ConfigError, DataError, EstimationError
from carmiss.estimators import EstimatorSpec, Regression, Scope, benchmark_spec, estimate
from carmiss.missingness import Missingness, ProcessedCovariates, process


logger = logging.getLogger(__name__)

CHUNK_SIZE = 50


def software_version() -> str:
    try:
        return importlib.metadata.version('carmiss')
    except importlib.metadata.PackageNotFoundError:
        return 'unknown'


def default_estimators(pi: float, include_cc: bool = False) -> list[EstimatorSpec]:
    '''The benchmark followed by Fisher, Lin and ToM for ccov, imp and mim, stratum-common then
    stratum-specific. Complete-case rows (Lin and ToM) are appended on request.'''
    specs = [benchmark_spec(pi)]
    for missingness in (Missingness.CCOV, Missingness.IMP, Missingness.MIM):
        for scope in (Scope.COMMON, Scope.STRATUM_SPECIFIC):
            for regression in Regression:
                specs.append(EstimatorSpec(regression, missingness, scope, pi=pi))
    if include_cc:
        for regression in (Regression.LIN, Regression.TOM):
            specs.append(EstimatorSpec(regression, Missingness.CC, Scope.COMMON, pi=pi))
    return specs


@dataclasses.dataclass(frozen=True, eq=False)
class ReplicationResult:
    index: int
    tau_hat: np.ndarray
    '''Per estimator; NaN where the estimator failed.'''

    se: np.ndarray
    covered: np.ndarray
    errors: tuple[str | None, ...]


def run_replication(
        spec: DgpSpec,
        estimators: typing.Sequence[EstimatorSpec],
        replication: int,
        tau: float,
        level: float = 0.95,
) -> ReplicationResult:
    sample = generate(spec, replication)
    m = len(estimators)
    tau_hat = np.full(m, np.nan)
    se = np.full(m, np.nan)
    covered = np.full(m, np.nan)
    errors: list[str | None] = [None] * m
    processed: dict[tuple, ProcessedCovariates] = {}
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', CarmissAdvisory)
        for j, estimator in enumerate(estimators):
            try:
                key = (estimator.missingness, estimator.imputation)
                if estimator.missingness != Missingness.CC and key not in processed:
                    processed[key] = process(sample.data, estimator.missingness, estimator.imputation)[1]
                result = estimate(sample.data, estimator, level, processed.get(key))
            except (EstimationError, DataError) as e:
                errors[j] = f'{type(e).__name__}: {e}'
                continue
            tau_hat[j] = result.tau_hat
            se[j] = result.se
            covered[j] = float(result.ci[0] <= tau <= result.ci[1])
    return ReplicationResult(replication, tau_hat, se, covered, tuple(errors))


def _run_chunk(spec, estimators, indices, tau, level) -> list[ReplicationResult]:
    return [run_replication(spec, estimators, r, tau, level) for r in indices]


@dataclasses.dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    bias: float
    sd: float
    se: float
    rmse: float
    cp: float
    replications: int
    '''Replications in which the estimator produced a result.'''

    failures: int
    sd_ratio_to_benchmark: float = math.nan
    bias_vs_cc_target: float | None = None
    '''Complete-case rows only: bias against the complete-case subpopulation effect.'''

    failure_messages: tuple[str, ...] = ()


@dataclasses.dataclass(frozen=True)
class SimulationMetadata:
    model: int
    n: int
    pi: float
    scheme: str
    block_size: int | None
    biased_coin_prob: float
    p: int
    seed: int
    replications: int
    level: float
    snr_def: str
    snr: tuple[float, float]
    sigma: tuple[float, float]
    coefficients: dict[str, np.ndarray]
    true_tau: float
    true_tau_mc_se: float
    true_tau_complete_cases: float
    software_version: str


@dataclasses.dataclass(frozen=True)
class SimulationReport:
    rows: tuple[EstimatorSummary, ...]
    metadata: SimulationMetadata
    wall_time: float
    '''Seconds; kept out of the CSV table so that reruns are byte-identical.'''


def summarize(
        results: typing.Sequence[ReplicationResult],
        estimators: typing.Sequence[EstimatorSpec],
        tau: float,
        tau_cc: float,
) -> list[EstimatorSummary]:
    '''Aggregates replications in replication-index order, whatever order they arrived in.'''
    ordered = sorted(results, key=lambda r: r.index)
    tau_hat = np.array([r.tau_hat for r in ordered]).reshape(len(ordered), len(estimators))
    se = np.array([r.se for r in ordered]).reshape(tau_hat.shape)
    covered = np.array([r.covered for r in ordered]).reshape(tau_hat.shape)
    rows = []
    for j, estimator in enumerate(estimators):
        ok = ~np.isnan(tau_hat[:, j])
        values = tau_hat[ok, j]
        count = int(ok.sum())
        messages = tuple(dict.fromkeys(r.errors[j] for r in ordered if r.errors[j] is not None))
        if count == 0:
            rows.append(EstimatorSummary(
                estimator.label, math.nan, math.nan, math.nan, math.nan, math.nan,
                0, len(ordered), failure_messages=messages[:5],
            ))
            continue
        mean = float(values.mean())
        rows.append(EstimatorSummary(
            estimator=estimator.label,
            bias=mean - tau,
            sd=float(values.std(ddof=1)) if count >= 2 else math.nan,
            se=float(se[ok, j].mean()),
            rmse=math.sqrt(float(np.mean((values - tau) ** 2))),
            cp=float(covered[ok, j].mean()),
            replications=count,
            failures=len(ordered) - count,
            bias_vs_cc_target=mean - tau_cc if estimator.missingness == Missingness.CC else None,
            failure_messages=messages[:5],
        ))
    if rows and estimators[0].is_benchmark and rows[0].sd > 0:
        benchmark_sd = rows[0].sd
        rows = [dataclasses.replace(row, sd_ratio_to_benchmark=row.sd / benchmark_sd) for row in rows]
    return rows


def run_monte_carlo(
        spec: DgpSpec,
        estimators: typing.Sequence[EstimatorSpec] | None = None,
        replications: int = 1000,
        level: float = 0.95,
        threads: int = 1,
) -> SimulationReport:
    '''Runs `replications` independent replications of `spec` on up to `threads` processes.

    Results only depend on `spec.seed`; the worker count and scheduling never change them.'''
    if replications < 1:
        raise ConfigError(f'replications must be at least 1, got {replications}')
    estimators = list(default_estimators(spec.pi) if estimators is None else estimators)
    start = time.perf_counter()
    spec.ensure_coefficients()
    sigma = spec.ensure_sigma()
    tau, tau_se = true_tau(spec)
    tau_cc, _ = true_tau_complete_cases(spec)
    logger.info('true tau %.6f (MC se %.2g), complete-case tau %.6f', tau, tau_se, tau_cc)

    chunks = [
        list(range(first, min(first + CHUNK_SIZE, replications)))
        for first in range(0, replications, CHUNK_SIZE)
    ]
    results: list[ReplicationResult] = []
    if threads <= 1:
        for done, chunk in enumerate(chunks, start=1):
            results.extend(_run_chunk(spec, estimators, chunk, tau, level))
            logger.info('replications: %d/%d', min(done * CHUNK_SIZE, replications), replications)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as executor:
            futures = [
                executor.submit(_run_chunk, spec, estimators, chunk, tau, level)
                for chunk in chunks
            ]
            for done, future in enumerate(concurrent.futures.as_completed(futures), start=1):
                results.extend(future.result())
                logger.info('chunks: %d/%d', done, len(futures))

    rows = summarize(results, estimators, tau, tau_cc)
    scheme = spec.scheme
    assert scheme is not None
    metadata = SimulationMetadata(
        model=spec.model,
        n=spec.n,
        pi=spec.pi,
        scheme=str(scheme.kind),
        block_size=scheme.block_size,
        biased_coin_prob=scheme.biased_coin_prob,
        p=spec.p_total,
        seed=spec.seed,
        replications=replications,
        level=level,
        snr_def=str(spec.snr_def),
        snr=(spec.snr1, spec.snr0),
        sigma=sigma,
        coefficients=spec.ensure_coefficients(),
        true_tau=tau,
        true_tau_mc_se=tau_se,
        true_tau_complete_cases=tau_cc,
        software_version=software_version(),
    )
    return SimulationReport(tuple(rows), metadata, time.perf_counter() - start)
