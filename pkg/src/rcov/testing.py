"""Dense reference implementations, for validation at small dimension only.

Everything here materializes ``d^2 x N`` or ``d^2 x d^2`` arrays, which the
production routines must never do; a hard cap of ``d <= 8`` keeps accidental
use at scale impossible.  Test modules compare the matrix-free paths against
these.
"""

from __future__ import annotations

import numpy as np

from .exceptions import BudgetExceededError
from .tensor_linalg import as_sample_matrix, as_weight_vector

DENSE_MAX_DIM = 8


def _check_dim(d: int) -> None:
    if d > DENSE_MAX_DIM:
        raise BudgetExceededError(
            f"dense reference path supports d <= {DENSE_MAX_DIM}, got d = {d}"
        )


def dense_z(Y: np.ndarray) -> np.ndarray:
    """All tensored points as an explicit ``d^2 x N`` matrix."""
    Y = as_sample_matrix(Y)
    _check_dim(Y.shape[0])
    return np.stack([np.kron(y, y) for y in Y.T], axis=1)


def dense_mean(Y: np.ndarray, w: np.ndarray) -> np.ndarray:
    Z = dense_z(Y)
    w = as_weight_vector(w, Y.shape[1], require_mass=True)
    return Z @ w / w.sum()


def dense_m(Y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted second-moment matrix ``M(w)`` as a dense ``d^2 x d^2`` array."""
    Z = dense_z(Y)
    w = as_weight_vector(w, Y.shape[1], require_mass=True)
    mu = Z @ w / w.sum()
    Zc = Z - mu[:, None]
    return (Zc * (w / w.sum())) @ Zc.T


def dense_expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via eigendecomposition."""
    A = np.asarray(A, dtype=np.float64)
    vals, vecs = np.linalg.eigh((A + A.T) / 2.0)
    return (vecs * np.exp(vals)) @ vecs.T


def dense_taylor_expm(A: np.ndarray, ell: int) -> np.ndarray:
    """Degree-``ell`` Taylor prefix of ``exp(A)`` as a dense matrix."""
    A = np.asarray(A, dtype=np.float64)
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, ell + 1):
        term = term @ A / k
        out = out + term
    return out
