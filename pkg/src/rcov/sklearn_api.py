"""Scikit-learn-compatible front end for the robust covariance pipeline.

The wrapper follows the covariance-estimator surface of scikit-learn
(``fit`` + ``covariance_``/``precision_``, ``error_norm``, ``mahalanobis``)
so the estimator composes with ``clone``, ``get_params`` and friends.
``transform``/``predict`` are deliberately absent: a covariance estimate is
not a per-sample mapping.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import pinvh
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .estimator import EstimatorConfig, mahalanobis_error, robust_covariance


class RobustCovariance(BaseEstimator):
    """Robust covariance of zero-mean data under adversarial contamination.

    Parameters
    ----------
    epsilon : float, default=0.0
        Assumed fraction of corrupted samples, in ``[0, 0.25)``.  Zero means
        the data are trusted and the pipeline acts as a (slightly slower)
        empirical covariance.
    seed : int, default=0
        Seed for every randomized internal component; fits are reproducible.

    Attributes
    ----------
    covariance_ : ndarray of shape (n_features, n_features)
        The robust covariance estimate (symmetric PSD).
    precision_ : ndarray of shape (n_features, n_features)
        Pseudo-inverse of ``covariance_``.
    estimate_ : CovarianceEstimate
        Full provenance record (per-phase traces, stop reasons, timings).
    n_features_in_ : int

    Notes
    -----
    The model is a zero-mean Gaussian: samples are used as-is, without
    centering.  Center the data yourself if the mean is not known to be
    zero (doing so robustly is outside this estimator's contract).
    """

    def __init__(self, epsilon: float = 0.0, seed: int = 0):
        self.epsilon = epsilon
        self.seed = seed

    def fit(self, X, y=None):
        """Fit from samples arranged row-wise, ``X`` of shape (n_samples, n_features)."""
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        config = EstimatorConfig(epsilon=self.epsilon, seed=self.seed)
        # internal routines store samples as columns
        self.estimate_ = robust_covariance(np.ascontiguousarray(X.T), config)
        self.covariance_ = self.estimate_.sigma_hat
        self.precision_ = pinvh(self.covariance_)
        self.n_features_in_ = X.shape[1]
        return self

    def error_norm(self, comp_cov) -> float:
        """Mahalanobis (relative Frobenius) error of the fit against ``comp_cov``."""
        check_is_fitted(self, "covariance_")
        comp_cov = check_array(comp_cov, dtype=np.float64)
        return mahalanobis_error(self.covariance_, comp_cov)

    def mahalanobis(self, X) -> np.ndarray:
        """Squared Mahalanobis distance of each row of ``X`` (zero location)."""
        check_is_fitted(self, "precision_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features; estimator was fit with "
                f"{self.n_features_in_}"
            )
        return np.einsum("ij,jk,ik->i", X, self.precision_, X)
