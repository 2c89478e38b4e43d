'''Simulation data-generating processes, noise calibration and the true-effect oracle.

Every random quantity comes from its own child of `SeedSequence(spec.seed)`:

- `(0,)` the outcome-model coefficients, drawn once per study;
- `(1,)` the calibration pre-sample;
- `(2,)` the oracle sample;
- `(3, r)` replication r, split into a unit stream and an assignment stream.

A replication therefore depends only on (seed, r), whichever worker runs it.'''

import dataclasses
import enum
import logging
import math

import numpy as np

from carmiss.errors import ConfigError, DegenerateSignal
from carmiss.randomization import RandomizationScheme, SchemeKind, assign
from carmiss.trial import TrialData


logger = logging.getLogger(__name__)

XI_PROB = 0.2
MISSING_BASE = 0.05
MISSING_SLOPE = 0.5
CHUNK = 1_000_000

_X45_CHOLESKY = np.linalg.cholesky(np.array([[4.0, 1.0], [1.0, 1.0]]))


class SnrDefinition(enum.StrEnum):
    SD = 'sd'
    '''sigma = sd(signal) / SNR'''
    VAR = 'var'
    '''sigma^2 = var(signal) / SNR'''


@dataclasses.dataclass
class DgpSpec:
    '''One simulation design. Coefficients and noise scales are filled in lazily and then frozen.'''

    model: int = 2
    n: int = 200
    pi: float = 0.5
    scheme: RandomizationScheme | None = None
    '''`None` means stratified block randomization at `pi` with the default block size.'''

    p_total: int = 5
    '''5 covariates, or 7 with two outcome-independent extras.'''

    mu1: float = 2.0
    mu0: float = 1.0
    snr1: float = 3.0
    snr0: float = 1.0
    snr_def: SnrDefinition = SnrDefinition.SD
    seed: int = 20240601
    calibration_draws: int = 1_000_000
    oracle_draws: int = 10_000_000

    coefficients: dict[str, np.ndarray] | None = None
    '''Drawn from the study seed on first use unless given.'''

    sigma: tuple[float, float] | None = None
    '''(sigma_1, sigma_0); calibrated on first use unless given.'''

    _oracle: dict[str, tuple[float, float]] | None = dataclasses.field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.model not in (1, 2, 3):
            raise ConfigError(f'unknown model {self.model}; models are 1, 2 and 3')
        if self.p_total not in (5, 7):
            raise ConfigError(f'p must be 5 or 7, got {self.p_total}')
        if not 0.0 < self.pi < 1.0:
            raise ConfigError(f'target pi {self.pi} is not in (0, 1)')
        self.snr_def = SnrDefinition(self.snr_def)
        if self.scheme is None:
            self.scheme = RandomizationScheme(SchemeKind.STRATIFIED_BLOCK, self.pi)
        elif not math.isclose(self.scheme.target_pi, self.pi):
            raise ConfigError(f'scheme targets pi={self.scheme.target_pi} but the design has pi={self.pi}')

    def stream(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def ensure_coefficients(self) -> dict[str, np.ndarray]:
        if self.coefficients is None:
            self.coefficients = draw_coefficients(self.model, self.stream(0))
        return self.coefficients

    def ensure_sigma(self) -> tuple[float, float]:
        if self.sigma is None:
            self.sigma = calibrate_sigma(self)
        return self.sigma


@dataclasses.dataclass(frozen=True, eq=False)
class GeneratedSample:
    data: TrialData
    y1: np.ndarray
    y0: np.ndarray
    xi: np.ndarray
    mask: np.ndarray
    '''Shared by both arms: M_i(1) = M_i(0).'''


@dataclasses.dataclass(frozen=True, eq=False)
class Units:
    xi: np.ndarray
    x: np.ndarray
    mask: np.ndarray


def draw_coefficients(model: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    match model:
        case 1:
            beta0 = rng.uniform(-2.0, 2.0, size=5)
            beta1 = beta0 + rng.uniform(0.0, 1.0, size=5)
            beta0[2] = 0.0
            beta1[2] = rng.uniform(0.0, 10.0)
            return {'beta1': beta1, 'beta0': beta0}
        case 2:
            return {'beta': rng.uniform(-2.0, 2.0, size=5)}
        case 3:
            return {'alpha': np.array([
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(0.0, 4.0),
                rng.uniform(-0.4, 0.4),
            ])}
    raise AssertionError(model)


def draw_units(spec: DgpSpec, m: int, rng: np.random.Generator) -> Units:
    xi = rng.binomial(1, XI_PROB, size=m).astype(np.float64)
    x1 = rng.choice(np.array([-2.0, -1.0, 1.0, 2.0]), size=m)
    x2 = rng.choice(np.array([1.0, 2.0, 3.0]), size=m, p=[0.2, 0.3, 0.5])
    x3 = rng.exponential(1.0 / (xi + 1.0))
    z = rng.standard_normal((m, 2)) @ _X45_CHOLESKY.T
    if spec.model == 3:
        x4 = np.maximum(1.0 + z[:, 0], 0.0) + xi
    else:
        x4 = 1.0 + xi + z[:, 0]
    x5 = xi + z[:, 1]
    columns = [x1, x2, x3, x4, x5]
    if spec.p_total == 7:
        columns.append(rng.standard_normal(m))
        columns.append(1.0 + 2.0 * rng.standard_normal(m))
    x = np.column_stack(columns)
    mask = np.zeros(x.shape, dtype=bool)
    rate = MISSING_SLOPE * xi + MISSING_BASE
    mask[:, 3:] = rng.random((m, spec.p_total - 3)) < rate[:, None]
    return Units(xi=xi, x=x, mask=mask)


def signals(spec: DgpSpec, units: Units) -> tuple[np.ndarray, np.ndarray]:
    '''(5 xi + g_1(X), g_0(X)).'''
    coefficients = spec.ensure_coefficients()
    x = units.x
    x1, x2, x3, x4, x5 = (x[:, j] for j in range(5))
    match spec.model:
        case 1:
            b1 = coefficients['beta1']
            b0 = coefficients['beta0']
            g1 = b1[0] * x1 + b1[1] * x2 + b1[2] * x3 + b1[3] * x1 * x4 + b1[4] * x2 * x5
            g0 = b0[0] * x1 + b0[1] * x2 + b0[3] * x1 * x4 + b0[4] * x2 * x5
        case 2:
            g1 = g0 = x[:, :5] @ coefficients['beta']
        case 3:
            a = coefficients['alpha']
            assert np.all(x4 >= 0.0), 'model 3 needs X4 >= 0'
            shared = x2 * np.log(a[2] * x3 * np.log(x4 + 1.0) + 1.0)
            g1 = a[0] * x1 + a[1] * x2 ** 2 * x3 + shared + a[3] * np.exp(x5)
            g0 = a[0] * x1 ** 2 + a[1] * x2 * x3 + shared
        case _:
            raise AssertionError(spec.model)
    return 5.0 * units.xi + g1, g0


def strata_of(x: np.ndarray) -> np.ndarray:
    '''Four strata from X1 in {1, 2} and X2 in {1, 2}.'''
    return 1 + 2 * np.isin(x[:, 0], (1.0, 2.0)).astype(np.int64) + np.isin(x[:, 1], (1.0, 2.0)).astype(np.int64)


def stratification_factors(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.isin(x[:, 0], (1.0, 2.0)), np.isin(x[:, 1], (1.0, 2.0))]).astype(np.int8)


def _chunks(total: int):
    done = 0
    while done < total:
        size = min(CHUNK, total - done)
        yield size
        done += size


def calibrate_sigma(spec: DgpSpec) -> tuple[float, float]:
    '''Noise scales giving the target signal-to-noise ratios, from a pre-sample of the signals.'''
    rng = spec.stream(1)
    count = 0
    sums = np.zeros(2)
    squares = np.zeros(2)
    for size in _chunks(spec.calibration_draws):
        s1, s0 = signals(spec, draw_units(spec, size, rng))
        # center on the first chunk mean to keep the sum of squares well conditioned
        if count == 0:
            shift = np.array([s1.mean(), s0.mean()])
        d1 = s1 - shift[0]
        d0 = s0 - shift[1]
        sums += (d1.sum(), d0.sum())
        squares += (d1 @ d1, d0 @ d0)
        count += size
    variances = (squares - sums ** 2 / count) / (count - 1)
    sigma = []
    for arm, variance, snr in ((1, variances[0], spec.snr1), (0, variances[1], spec.snr0)):
        if not variance > 1e-12:
            raise DegenerateSignal(f'the arm-{arm} signal has zero variance; cannot calibrate its noise')
        if spec.snr_def == SnrDefinition.SD:
            sigma.append(math.sqrt(variance) / snr)
        else:
            sigma.append(math.sqrt(variance / snr))
    logger.debug('calibrated sigma_1=%g sigma_0=%g from %d draws', sigma[0], sigma[1], count)
    return sigma[0], sigma[1]


def _run_oracle(spec: DgpSpec) -> dict[str, tuple[float, float]]:
    if spec._oracle is not None:
        return spec._oracle
    rng = spec.stream(2)
    total = [0.0, 0, 0.0]
    complete = [0.0, 0, 0.0]
    shift = spec.mu1 - spec.mu0 + 5.0 * XI_PROB
    for size in _chunks(spec.oracle_draws):
        units = draw_units(spec, size, rng)
        s1, s0 = signals(spec, units)
        effect = spec.mu1 - spec.mu0 + s1 - s0 - shift
        full = ~units.mask.any(axis=1)
        for acc, values in ((total, effect), (complete, effect[full])):
            acc[0] += float(values.sum())
            acc[1] += values.size
            acc[2] += float(values @ values)

    def summarize(acc):
        mean = acc[0] / acc[1]
        variance = (acc[2] - acc[1] * mean ** 2) / (acc[1] - 1)
        return shift + mean, math.sqrt(max(variance, 0.0) / acc[1])

    spec._oracle = {'all': summarize(total), 'complete': summarize(complete)}
    return spec._oracle


def true_tau(spec: DgpSpec) -> tuple[float, float]:
    '''E{Y(1) - Y(0)} and its Monte Carlo standard error.

    The noise has mean zero in both arms and is left out of the oracle draws.'''
    return _run_oracle(spec)['all']


def true_tau_complete_cases(spec: DgpSpec) -> tuple[float, float]:
    '''E{Y(1) - Y(0) | every covariate observed}, the target complete-case analysis estimates.'''
    return _run_oracle(spec)['complete']


def generate(spec: DgpSpec, replication: int) -> GeneratedSample:
    sigma1, sigma0 = spec.ensure_sigma()
    units_rng, assignment_rng = (
        np.random.default_rng(child)
        for child in np.random.SeedSequence(spec.seed, spawn_key=(3, replication)).spawn(2)
    )
    units = draw_units(spec, spec.n, units_rng)
    s1, s0 = signals(spec, units)
    y1 = spec.mu1 + s1 + sigma1 * units_rng.standard_normal(spec.n)
    y0 = spec.mu0 + s0 + sigma0 * units_rng.standard_normal(spec.n)
    strata = strata_of(units.x)
    assert spec.scheme is not None
    treatment = assign(spec.scheme, strata, stratification_factors(units.x), assignment_rng)
    outcomes = np.where(treatment == 1, y1, y0)
    data = TrialData.from_arrays(
        outcomes, treatment, strata, units.x, units.mask, target_pi=spec.pi,
    )
    return GeneratedSample(data=data, y1=y1, y0=y0, xi=units.xi, mask=units.mask)
