'''Weighted least squares with rank-revealing column elimination.

Every estimator goes through `wls_fit`; OLS is the unit-weight case.'''

import dataclasses
import logging

import numpy as np
import scipy.linalg

from carmiss.errors import InsufficientRows


logger = logging.getLogger(__name__)

DEFAULT_RANK_TOLERANCE = 1e-10


def rank_guard(
        design: np.ndarray,
        weights: np.ndarray | None = None,
        tolerance: float = DEFAULT_RANK_TOLERANCE,
        reference: np.ndarray | None = None,
) -> list[int]:
    '''Greedy left-to-right column selection.

    Column j is dropped iff its part orthogonal to the kept (weighted) columns has norm at most
    `tolerance` times its own norm. Modified Gram-Schmidt with one reorthogonalization pass.

    A design that was already centered can pass the uncentered columns as `reference`; their
    norms then set the scale, so a column that centering reduced to rounding noise is dropped.'''
    design = np.asarray(design, dtype=np.float64)
    scale = np.ones(design.shape[0])
    if weights is not None:
        scale = np.sqrt(np.asarray(weights, dtype=np.float64))
    design = design * scale[:, None]
    if reference is not None:
        reference_norms = np.linalg.norm(np.asarray(reference, dtype=np.float64) * scale[:, None], axis=0)
    else:
        reference_norms = np.linalg.norm(design, axis=0)
    basis: list[np.ndarray] = []
    kept: list[int] = []
    for j in range(design.shape[1]):
        column = design[:, j]
        norm = reference_norms[j]
        if norm == 0.0 or np.linalg.norm(column) == 0.0:
            continue
        residual = column.copy()
        for _ in range(2):
            for q in basis:
                residual -= (q @ residual) * q
        residual_norm = np.linalg.norm(residual)
        if residual_norm <= tolerance * norm:
            continue
        basis.append(residual / residual_norm)
        kept.append(j)
    return kept


@dataclasses.dataclass(frozen=True, eq=False)
class RegressionFit:
    coefficients: np.ndarray
    '''Coefficients of the kept columns, in kept order.'''

    residuals: np.ndarray
    '''y - X beta on the original (unweighted) scale.'''

    kept_columns: list[int]
    '''Indices into the input design.'''

    xtx_inverse: np.ndarray
    '''(X'WX)^-1 over the kept columns.'''

    weights: np.ndarray | None
    '''`None` for ordinary least squares.'''

    n_columns: int
    '''Column count of the input design, kept or not.'''

    @property
    def rank(self) -> int:
        return len(self.kept_columns)

    @property
    def dof(self) -> int:
        return int(self.residuals.shape[0]) - self.rank

    @property
    def rss(self) -> float:
        '''Weighted residual sum of squares.'''
        if self.weights is None:
            return float(self.residuals @ self.residuals)
        return float((self.weights * self.residuals) @ self.residuals)

    @property
    def dropped_columns(self) -> list[int]:
        kept = set(self.kept_columns)
        return [j for j in range(self.n_columns) if j not in kept]

    def full_coefficients(self) -> np.ndarray:
        '''Coefficients over every input column; dropped columns get 0.'''
        out = np.zeros(self.n_columns)
        out[self.kept_columns] = self.coefficients
        return out

    def position(self, column: int) -> int | None:
        try:
            return self.kept_columns.index(column)
        except ValueError:
            return None


def wls_fit(
        design: np.ndarray,
        response: np.ndarray,
        weights: np.ndarray | None = None,
        tolerance: float = DEFAULT_RANK_TOLERANCE,
        reference: np.ndarray | None = None,
) -> RegressionFit:
    '''Minimizes sum w_i (y_i - x_i' beta)^2 over the columns kept by `rank_guard`.

    Solved through an economic QR factorization of the weighted design; the inverse Gram matrix
    comes from R^-1 R^-T.'''
    design = np.asarray(design, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    n, n_columns = design.shape
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        assert np.all(weights > 0), 'weights must be positive'
    kept = rank_guard(design, weights, tolerance, reference)
    rank = len(kept)
    if n <= rank:
        raise InsufficientRows(n, rank)
    if rank < n_columns:
        logger.debug('rank guard dropped columns %s', sorted(set(range(n_columns)) - set(kept)))

    x = design[:, kept]
    if rank == 0:
        return RegressionFit(
            coefficients=np.zeros(0),
            residuals=response.copy(),
            kept_columns=kept,
            xtx_inverse=np.zeros((0, 0)),
            weights=weights,
            n_columns=n_columns,
        )
    root = np.ones(n) if weights is None else np.sqrt(weights)
    q, r = scipy.linalg.qr(x * root[:, None], mode='economic')
    coefficients = scipy.linalg.solve_triangular(r, q.T @ (response * root))
    r_inverse = scipy.linalg.solve_triangular(r, np.eye(rank))
    return RegressionFit(
        coefficients=coefficients,
        residuals=response - x @ coefficients,
        kept_columns=kept,
        xtx_inverse=r_inverse @ r_inverse.T,
        weights=weights,
        n_columns=n_columns,
    )
