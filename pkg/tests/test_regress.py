import numpy as np
import pytest
import scipy.linalg

from carmiss.errors import InsufficientRows
from carmiss.regress import rank_guard, wls_fit


def normal_equations(x, y, w=None):
    w = np.ones(len(y)) if w is None else w
    xtwx = x.T @ (w[:, None] * x)
    return np.linalg.solve(xtwx, x.T @ (w * y))


def test_matches_normal_equations(rng):
    for _ in range(1000):
        n = int(rng.integers(12, 60))
        k = int(rng.integers(1, 6))
        x = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        y = x @ rng.normal(size=k) + rng.normal(size=n)
        w = rng.uniform(0.5, 4.0, size=n) if rng.random() < 0.5 else None
        fit = wls_fit(x, y, w)
        assert fit.rank == k
        np.testing.assert_allclose(fit.coefficients, normal_equations(x, y, w), rtol=1e-10, atol=1e-12)


def test_gram_inverse_and_residuals(rng):
    x = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
    y = rng.normal(size=50)
    w = rng.uniform(1.0, 2.0, size=50)
    fit = wls_fit(x, y, w)
    np.testing.assert_allclose(fit.xtx_inverse, np.linalg.inv(x.T @ (w[:, None] * x)), rtol=1e-10)
    np.testing.assert_allclose(fit.residuals, y - x @ fit.coefficients)
    assert fit.rss == pytest.approx(float(np.sum(w * fit.residuals ** 2)))
    assert fit.dof == 47


def test_collinear_columns_are_dropped(rng):
    z = rng.normal(size=40)
    x = np.column_stack([np.ones(40), z, 2.0 * z - 1.0, np.zeros(40), rng.normal(size=40)])
    y = 1.0 + 3.0 * z + rng.normal(size=40)
    fit = wls_fit(x, y)
    assert fit.kept_columns == [0, 1, 4]
    assert fit.dropped_columns == [2, 3]
    full = fit.full_coefficients()
    assert full[2] == 0.0 and full[3] == 0.0
    assert fit.position(4) == 2
    assert fit.position(2) is None
    reference = wls_fit(x[:, [0, 1, 4]], y)
    np.testing.assert_allclose(fit.coefficients, reference.coefficients)


def test_rank_guard_reference_scale(rng):
    # centering a constant column leaves rounding noise that must not survive
    u = np.column_stack([np.full(30, 1e6), rng.normal(size=30)])
    centered = u - u.mean(axis=0)
    assert rank_guard(centered, reference=u) == [1]


def test_insufficient_rows():
    with pytest.raises(InsufficientRows) as e:
        wls_fit(np.eye(3), np.ones(3))
    assert (e.value.rows, e.value.rank) == (3, 3)


def test_rank_zero():
    fit = wls_fit(np.zeros((5, 2)), np.arange(5.0))
    assert fit.rank == 0
    np.testing.assert_array_equal(fit.residuals, np.arange(5.0))
    np.testing.assert_array_equal(fit.full_coefficients(), [0.0, 0.0])


def random_problem(rng, n=60, k=4):
    x = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    y = x @ rng.normal(size=k) + rng.normal(size=n)
    return x, y, rng.uniform(0.5, 4.0, size=n)


def test_row_order_does_not_matter(rng):
    for _ in range(50):
        x, y, w = random_problem(rng)
        order = rng.permutation(len(y))
        fit = wls_fit(x, y, w)
        shuffled = wls_fit(x[order], y[order], w[order])
        assert shuffled.kept_columns == fit.kept_columns
        np.testing.assert_allclose(shuffled.coefficients, fit.coefficients, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(shuffled.residuals, fit.residuals[order], atol=1e-10)


@pytest.mark.parametrize('factor', [1e-3, 37.0, 1e4])
def test_weights_are_relative(rng, factor):
    x, y, w = random_problem(rng)
    fit = wls_fit(x, y, w)
    scaled = wls_fit(x, y, factor * w)
    np.testing.assert_allclose(scaled.coefficients, fit.coefficients, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(scaled.residuals, fit.residuals, atol=1e-10)
    np.testing.assert_allclose(scaled.xtx_inverse, fit.xtx_inverse / factor, rtol=1e-9)


def test_redundant_column_leaves_residuals(rng):
    for _ in range(50):
        x, y, w = random_problem(rng)
        extra = x @ rng.normal(size=x.shape[1])
        fit = wls_fit(x, y, w)
        widened = wls_fit(np.column_stack([x, extra]), y, w)
        assert widened.dropped_columns == [x.shape[1]]
        np.testing.assert_allclose(widened.residuals, fit.residuals, atol=1e-9)


def test_rank_guard_agrees_with_pivoted_qr():
    i, j = np.indices((10, 6))
    hilbert = 1.0 / (i + j + 1.0)
    _, r, pivots = scipy.linalg.qr(hilbert, mode='economic', pivoting=True)
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10 * abs(r[0, 0])))
    assert rank_guard(hilbert, tolerance=1e-10) == sorted(pivots[:rank].tolist())
    doubled = np.column_stack([hilbert, hilbert[:, 2] + hilbert[:, 4]])
    assert rank_guard(doubled, tolerance=1e-10) == [0, 1, 2, 3, 4, 5]
