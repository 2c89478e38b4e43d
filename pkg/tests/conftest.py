from pathlib import Path

import numpy as np
import pytest

from carmiss.estimators import set_cross_check
from carmiss.trial import TrialData


DATA_DIR = Path(__file__).parent / 'data'


@pytest.fixture(autouse=True)
def cross_check():
    '''Every estimator call in the tests also fits the regression display and compares.'''
    set_cross_check(True)
    yield
    set_cross_check(False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


def make_trial(
        rng: np.random.Generator,
        n: int = 240,
        n_strata: int = 3,
        p: int = 3,
        pi: float = 0.5,
        missing_rate: float = 0.2,
        shared_pattern: bool = False,
) -> TrialData:
    '''A random trial with exact within-stratum allocation.

    Column 0 is always observed; the others miss independently at `missing_rate`, or with one
    shared pattern when `shared_pattern` is set.'''
    strata = np.sort(rng.integers(1, n_strata + 1, size=n))
    strata[:n_strata] = np.arange(1, n_strata + 1)
    treatment = np.zeros(n, dtype=np.int64)
    for k in range(1, n_strata + 1):
        rows = np.flatnonzero(strata == k)
        treated = rng.permutation(rows)[:int(round(pi * rows.size))]
        treatment[treated] = 1
    x = rng.normal(size=(n, p)) + np.arange(p)[None, :]
    effect = 1.0 + 0.5 * x[:, 0]
    outcomes = (
        0.3 * strata + x @ rng.uniform(-1.0, 1.0, size=p)
        + treatment * effect + rng.normal(scale=1.0 + treatment, size=n)
    )
    mask = np.zeros((n, p), dtype=bool)
    if shared_pattern:
        mask[:, 1:] = (rng.random(n) < missing_rate)[:, None]
    else:
        mask[:, 1:] = rng.random((n, p - 1)) < missing_rate
    x[mask] = np.nan
    return TrialData.from_arrays(outcomes, treatment, strata, x, mask, target_pi=pi)


@pytest.fixture
def trial_factory():
    return make_trial


@pytest.fixture
def trial(rng) -> TrialData:
    return make_trial(rng)
