import math

import numpy as np
import pytest

from carmiss.dgp import (
    DgpSpec, SnrDefinition,
    calibrate_sigma, draw_coefficients, draw_units, generate, signals, strata_of, true_tau,
    true_tau_complete_cases,
)
from carmiss.errors import ConfigError, DegenerateSignal
from carmiss.randomization import RandomizationScheme, SchemeKind
from carmiss.trial import validate


def small_spec(**kwargs) -> DgpSpec:
    kwargs.setdefault('calibration_draws', 50_000)
    kwargs.setdefault('oracle_draws', 200_000)
    return DgpSpec(**kwargs)


def test_coefficient_ranges(rng):
    one = draw_coefficients(1, rng)
    assert one['beta0'][2] == 0.0
    assert 0.0 <= one['beta1'][2] <= 10.0
    for j in (0, 1, 3, 4):
        assert -2.0 <= one['beta0'][j] <= 2.0
        assert 0.0 <= one['beta1'][j] - one['beta0'][j] <= 1.0
    assert np.all(np.abs(draw_coefficients(2, rng)['beta']) <= 2.0)
    alpha = draw_coefficients(3, rng)['alpha']
    assert 0.0 <= alpha[2] <= 4.0
    assert abs(alpha[3]) <= 0.4


@pytest.mark.parametrize('p', [5, 7])
def test_units(rng, p):
    units = draw_units(small_spec(p_total=p), 20_000, rng)
    assert units.x.shape == (20_000, p)
    assert set(np.unique(units.x[:, 0]).tolist()) == {-2.0, -1.0, 1.0, 2.0}
    assert set(np.unique(units.x[:, 1]).tolist()) == {1.0, 2.0, 3.0}
    assert not units.mask[:, :3].any()
    assert units.xi.mean() == pytest.approx(0.2, abs=0.02)
    # missing with probability 0.05 + 0.5 xi
    assert units.mask[units.xi == 0, 3].mean() == pytest.approx(0.05, abs=0.01)
    assert units.mask[units.xi == 1, 3].mean() == pytest.approx(0.55, abs=0.03)
    cov = np.cov(units.x[units.xi == 0][:, [3, 4]].T)
    np.testing.assert_allclose(cov, [[4.0, 1.0], [1.0, 1.0]], atol=0.15)


def test_model_three_keeps_x4_nonnegative(rng):
    spec = small_spec(model=3)
    units = draw_units(spec, 10_000, rng)
    assert np.all(units.x[:, 3] >= 0.0)
    s1, s0 = signals(spec, units)
    assert np.all(np.isfinite(s1)) and np.all(np.isfinite(s0))


def test_model_two_has_constant_effect(rng):
    spec = small_spec(model=2)
    units = draw_units(spec, 1000, rng)
    s1, s0 = signals(spec, units)
    np.testing.assert_allclose(s1 - s0, 5.0 * units.xi)


def test_strata():
    x = np.array([[-2.0, 3.0], [1.0, 3.0], [-1.0, 2.0], [2.0, 1.0]])
    assert strata_of(x).tolist() == [1, 3, 2, 4]


def test_sd_and_var_definitions_share_the_variance():
    sd = calibrate_sigma(small_spec(snr_def=SnrDefinition.SD))
    var = calibrate_sigma(small_spec(snr_def=SnrDefinition.VAR))
    assert var[0] / sd[0] == pytest.approx(math.sqrt(3.0))
    assert var[1] / sd[1] == pytest.approx(1.0)


def test_zero_signal_cannot_be_calibrated():
    spec = small_spec(model=2, coefficients={'beta': np.zeros(5)})
    with pytest.raises(DegenerateSignal):
        calibrate_sigma(spec)


def test_true_tau_of_model_two():
    spec = small_spec(model=2)
    tau, se = true_tau(spec)
    # mu_1 - mu_0 + 5 E[xi]
    assert abs(tau - 2.0) <= 5 * se
    tau_cc, _ = true_tau_complete_cases(spec)
    # complete units have xi = 1 less often
    assert tau_cc < tau


def test_generate_is_reproducible():
    spec = small_spec(model=1, n=300)
    first = generate(spec, 4)
    second = generate(spec, 4)
    other = generate(spec, 5)
    np.testing.assert_array_equal(first.data.outcomes, second.data.outcomes)
    np.testing.assert_array_equal(first.data.treatment, second.data.treatment)
    assert not np.array_equal(first.data.outcomes, other.data.outcomes)
    np.testing.assert_array_equal(
        first.data.outcomes, np.where(first.data.treatment == 1, first.y1, first.y0),
    )
    assert validate(first.data).ok
    np.testing.assert_array_equal(first.data.missing_mask, first.mask)


@pytest.mark.parametrize('kind', list(SchemeKind))
def test_generate_with_each_scheme(kind):
    spec = small_spec(n=400, pi=2 / 3, scheme=RandomizationScheme(kind, 2 / 3))
    sample = generate(spec, 0)
    assert sample.data.treatment.mean() == pytest.approx(2 / 3, abs=0.08)
    assert sample.data.target_pi == pytest.approx(2 / 3)


def test_invalid_designs():
    with pytest.raises(ConfigError):
        DgpSpec(model=4)
    with pytest.raises(ConfigError):
        DgpSpec(p_total=6)
    with pytest.raises(ConfigError):
        DgpSpec(pi=2 / 3, scheme=RandomizationScheme(SchemeKind.SIMPLE, 0.5))
    assert DgpSpec(pi=2 / 3).scheme.block_size == 6
