"""Synthetic Gaussian data, adversarial corruption, and goodness statistics.

The corruption model replaces exactly ``floor(eps * N)`` samples.  The
adversary sees the clean samples before choosing replacements (e.g. the
variance-inflation strategy draws from a scaled copy of the empirical
covariance), and the output column order is shuffled so that position carries
no signal.  ``good_mask`` marks the surviving clean samples; it exists for
diagnostics and evaluation only and is never consumed by the estimator.

Goodness statistics quantify how far a *tensored* sample cloud sits from the
moments it would have under a reference distribution.  With tensored points
``Z_i = X_i (x) X_i`` and a full-sample mean ``mu_S``:

* ``gamma1 = || mu_S - mu_ref ||``
* ``gamma2 = || C - s*I ||``      (restricted to the symmetric subspace)
* ``beta1  = max_T || mean_{i in T} Z_i - mu_ref ||``
* ``beta2  = max_T || C_T - s*I ||``  (same restriction, same centering)

where ``C`` (resp. ``C_T``) is the second moment of ``Z_i - mu_S`` over the
full sample (resp. over a subset ``T`` of size ``round(2*eps*N)``), ``mu_ref``
defaults to ``flatten(I_d)`` and the target scale ``s`` defaults to 2 -- the
mean and covariance of ``X (x) X`` for standard normal ``X``.  Spectral
deviations are measured inside the symmetric subspace because every tensored
point (hence every moment above) is the flattening of a symmetric matrix; the
antisymmetric directions are structurally empty and would otherwise dominate
every comparison with a multiple of the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .exceptions import (
    BudgetExceededError,
    DegenerateInputError,
    DimensionError,
    SpecError,
)
from .tensor_linalg import (
    MatVecHandle,
    ZOps,
    as_sample_matrix,
    default_power_iters,
    power_method,
    symmetric_basis,
)

STRATEGIES = ("none", "large_spike", "cluster", "subtract_tail", "variance_inflate")

_SUBSET_BUDGET = 10 ** 6   # exhaustive mode enumerates at most this many subsets
_DENSE_GOODNESS_DIM = 4    # spectral deviations go dense at or below this d
_DENSE_CHECK_DIM = 6       # tensor_covariance_check materializes d^2 x d^2


# ---------------------------------------------------------------------------
# sampling and corruption
# ---------------------------------------------------------------------------

def _psd_factor(sigma: np.ndarray) -> np.ndarray:
    """Symmetric factor F with F F^T = sigma; rejects non-PSD input."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionError(f"covariance must be square, got shape {sigma.shape}")
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    tol = 1e-10 * max(1.0, float(vals[-1]))
    if vals[0] < -tol:
        raise DegenerateInputError(
            f"covariance is not PSD (min eigenvalue {vals[0]:.3e})"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_gaussian(d: int, n: int, sigma: np.ndarray, seed: int) -> np.ndarray:
    """Draw ``n`` zero-mean Gaussian samples with covariance ``sigma``, as d x n."""
    if d < 1 or n < 1:
        raise DimensionError("need d >= 1 and n >= 1")
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (d, d):
        raise DimensionError(f"covariance shape {sigma.shape} != ({d}, {d})")
    factor = _psd_factor(sigma)
    rng = np.random.default_rng(seed)
    return factor @ rng.standard_normal((d, n))


@dataclass
class CorruptionSpec:
    """What fraction of samples to replace, how, and with which parameters.

    ``direction`` (unit vector, default ``e_1``) orients the spike/cluster
    strategies; ``magnitude`` is the spike norm, ``distance`` the cluster
    offset, and ``variance_factor`` the inflation applied to the empirical
    covariance when drawing replacement noise.
    """

    epsilon: float
    strategy: str = "none"
    seed: int = 0
    direction: Optional[np.ndarray] = None
    magnitude: float = 100.0
    distance: float = 50.0
    variance_factor: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 0.5:
            raise SpecError(f"corruption rate must be in [0, 0.5), got {self.epsilon}")
        if self.strategy not in STRATEGIES:
            raise SpecError(f"unknown strategy {self.strategy!r}; pick from {STRATEGIES}")

    def unit_direction(self, d: int) -> np.ndarray:
        if self.direction is None:
            u = np.zeros(d)
            u[0] = 1.0
            return u
        u = np.asarray(self.direction, dtype=np.float64)
        if u.shape != (d,):
            raise SpecError(f"direction must have shape ({d},), got {u.shape}")
        norm = np.linalg.norm(u)
        if norm == 0.0:
            raise SpecError("direction must be a nonzero vector")
        return u / norm


@dataclass
class LabeledDataset:
    """Samples plus provenance: which columns survived, and the true covariance.

    ``good_mask`` is evaluation-only metadata.  Estimators receive the bare
    ``samples`` array and never see the mask.
    """

    samples: np.ndarray
    good_mask: np.ndarray
    sigma_true: Optional[np.ndarray] = None
    spec: Optional[CorruptionSpec] = None

    def __post_init__(self):
        self.samples = as_sample_matrix(self.samples)
        self.good_mask = np.asarray(self.good_mask, dtype=bool)
        if self.good_mask.shape != (self.samples.shape[1],):
            raise DimensionError("good_mask must have one entry per sample")

    @property
    def n_bad(self) -> int:
        return int((~self.good_mask).sum())


def corrupt(
    data: np.ndarray,
    spec: CorruptionSpec,
    sigma_true: Optional[np.ndarray] = None,
) -> LabeledDataset:
    """Replace ``floor(eps*N)`` columns of ``data`` according to ``spec``.

    Strategy ``"none"`` (or ``eps`` small enough that no column is replaced)
    returns the input untouched with an all-true mask; otherwise the chosen
    columns are overwritten and the column order is reshuffled.
    """
    X = as_sample_matrix(data).copy()
    d, n = X.shape
    n_bad = int(math.floor(spec.epsilon * n))
    mask = np.ones(n, dtype=bool)
    if spec.strategy == "none" or n_bad == 0:
        return LabeledDataset(X, mask, sigma_true, spec)

    rng = np.random.default_rng(spec.seed)
    if spec.strategy == "subtract_tail":
        idx = np.argsort(np.linalg.norm(X, axis=0))[-n_bad:]
    else:
        idx = rng.choice(n, size=n_bad, replace=False)

    if spec.strategy == "large_spike":
        u = spec.unit_direction(d)
        X[:, idx] = spec.magnitude * u[:, None]
    elif spec.strategy == "cluster":
        u = spec.unit_direction(d)
        center = spec.distance * u
        X[:, idx] = center[:, None] + 0.01 * rng.standard_normal((d, n_bad))
    elif spec.strategy == "subtract_tail":
        X[:, idx] = 0.0
    elif spec.strategy == "variance_inflate":
        emp = data @ data.T / n          # adversary inspects the clean samples
        factor = _psd_factor(spec.variance_factor * emp)
        X[:, idx] = factor @ rng.standard_normal((d, n_bad))

    mask[idx] = False
    perm = rng.permutation(n)
    return LabeledDataset(X[:, perm], mask[perm], sigma_true, spec)


# ---------------------------------------------------------------------------
# goodness statistics
# ---------------------------------------------------------------------------

@dataclass
class GoodnessReport:
    """Deviation statistics of a tensored sample cloud (see module docstring).

    In ``"sampled"`` mode the subset maxima are lower bounds on the true
    values; ``"exhaustive"`` mode is exact over all subsets.
    """

    gamma1: float
    gamma2: float
    beta1: float
    beta2: float
    epsilon: float
    subset_size: int
    method: str
    n_subsets: int


def estimate_goodness(
    data: np.ndarray,
    epsilon: float,
    mode: str = "exhaustive",
    n_subsets: int = 200,
    mu_ref: Optional[np.ndarray] = None,
    second_moment_scale: float = 2.0,
    seed: int = 0,
) -> GoodnessReport:
    """Goodness statistics of ``data`` against a reference tensored law.

    ``mode="exhaustive"`` enumerates every subset of size ``round(2*eps*N)``
    (rejected if there are more than 10^6); ``mode="sampled"`` evaluates
    ``n_subsets`` random subsets plus the subset of points with the largest
    tensored deviation from ``mu_ref``, and reports lower bounds.
    """
    X = as_sample_matrix(data)
    d, n = X.shape
    if not 0.0 < epsilon < 0.5:
        raise SpecError(f"epsilon must be in (0, 0.5), got {epsilon}")
    if mode not in ("exhaustive", "sampled"):
        raise SpecError(f"mode must be 'exhaustive' or 'sampled', got {mode!r}")
    m = int(round(2.0 * epsilon * n))
    m = max(1, min(m, n))

    dim = d * d
    if mu_ref is None:
        mu_ref = np.eye(d).reshape(-1)
    else:
        mu_ref = np.asarray(mu_ref, dtype=np.float64)
        if mu_ref.shape != (dim,):
            raise DimensionError(f"mu_ref must have length {dim}")

    ops = ZOps(X)
    ones = np.ones(n)
    dense = d <= _DENSE_GOODNESS_DIM
    if dense:
        # At small d the tensored points fit in memory; computing every
        # statistic from this one explicit matrix keeps the arithmetic
        # canonical (reproducible by any direct reimplementation).
        Z = np.empty((dim, n))
        for i in range(n):
            y = X[:, i]
            Z[:, i] = np.multiply.outer(y, y).reshape(-1)
        mu_s = Z.sum(axis=1) / n
    else:
        mu_s = ops.z_matvec(ones) / n
    gamma1 = float(np.linalg.norm(mu_s - mu_ref))

    # Collect the subsets up front so both moments loop over the same list.
    if mode == "exhaustive":
        total = math.comb(n, m)
        if total > _SUBSET_BUDGET:
            raise BudgetExceededError(
                f"exhaustive mode over budget: C({n},{m}) = {total} > {_SUBSET_BUDGET}"
            )
        subsets = [np.asarray(t, dtype=np.intp) for t in combinations(range(n), m)]
    else:
        rng = np.random.default_rng(seed)
        subsets = [
            np.sort(rng.choice(n, size=m, replace=False)) for _ in range(n_subsets)
        ]
        # Greedy adversarial guess: the m points farthest from the reference
        # mean in tensored norm.
        sq = np.einsum("dn,dn->n", X, X)
        dev = sq * sq - 2.0 * ops.z_transpose_matvec(mu_ref) + mu_ref @ mu_ref
        subsets.append(np.sort(np.argsort(dev)[-m:]))

    if dense:
        Zc = Z - mu_s[:, None]
        basis = symmetric_basis(d)
        Zs = basis.T @ Zc                       # symmetric-subspace coordinates
        eye_s = np.eye(Zs.shape[0])
        full = Zs @ Zs.T / n
        gamma2 = float(
            np.abs(np.linalg.eigvalsh(full - second_moment_scale * eye_s)).max()
        )

        beta1 = 0.0
        beta2 = 0.0
        for t in subsets:
            mean_dev = Z[:, t].sum(axis=1) / len(t) - mu_ref
            beta1 = max(beta1, float(np.linalg.norm(mean_dev)))
            G = Zs[:, t]
            ct = G @ G.T / len(t)
            beta2 = max(
                beta2,
                float(np.abs(np.linalg.eigvalsh(ct - second_moment_scale * eye_s)).max()),
            )
    else:
        gamma2 = _spectral_deviation_matfree(
            ops, ones, mu_s, second_moment_scale, seed=seed
        )
        beta1 = 0.0
        beta2 = 0.0
        for k, t in enumerate(subsets):
            sub = ZOps(X[:, t])
            mean_dev = sub.z_matvec(np.ones(len(t))) / len(t) - mu_ref
            beta1 = max(beta1, float(np.linalg.norm(mean_dev)))
            beta2 = max(
                beta2,
                _spectral_deviation_matfree(
                    sub,
                    np.ones(len(t)),
                    mu_s,
                    second_moment_scale,
                    seed=seed + 17 * (k + 1),
                ),
            )

    return GoodnessReport(
        gamma1=gamma1,
        gamma2=gamma2,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        subset_size=m,
        method=mode,
        n_subsets=len(subsets),
    )


def _spectral_deviation_matfree(
    ops: ZOps,
    w: np.ndarray,
    center: np.ndarray,
    scale: float,
    seed: int,
) -> float:
    """``||C - scale*I||`` on the symmetric subspace via power iteration.

    ``C`` is the second moment of ``Z_i - center`` under weights ``w`` (the
    centering point need not be the subset's own mean).  The handle
    symmetrizes inputs and outputs, which restricts the operator to the
    symmetric subspace where the comparison is meaningful.
    """
    d = ops.d
    mass = float(w.sum())

    def sym(V: np.ndarray) -> np.ndarray:
        cube = V.T.reshape(-1, d, d)
        return ((cube + cube.transpose(0, 2, 1)) / 2.0).reshape(-1, d * d).T

    def matmat(V: np.ndarray) -> np.ndarray:
        Vs = sym(V)
        a = ops.z_transpose_matmat(Vs)
        a -= center @ Vs
        b = (w / mass)[:, None] * a
        out = ops.z_matmat(b)
        out -= np.outer(center, b.sum(axis=0))
        out -= scale * Vs
        return sym(out)

    handle = MatVecHandle(dim=d * d, matmat=matmat, norm_bound=None)
    return power_method(
        handle, iters=default_power_iters(d * d), seed=seed, restarts=3
    )


# ---------------------------------------------------------------------------
# moment sanity check
# ---------------------------------------------------------------------------

def tensor_covariance_check(
    sigma: np.ndarray,
    n: int,
    seed: int,
    reference: Optional[np.ndarray] = None,
) -> float:
    """Spectral distance between the empirical covariance of ``X (x) X`` and
    ``2 * reference (x) reference``, on the symmetric subspace.

    ``reference`` defaults to ``sigma`` itself, in which case the result
    converges to 0 as ``n`` grows; passing a different reference measures how
    far the tensored second moment sits from that target instead.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    d = sigma.shape[0]
    if d > _DENSE_CHECK_DIM:
        raise BudgetExceededError(
            f"dense moment check supports d <= {_DENSE_CHECK_DIM}, got {d}"
        )
    X = sample_gaussian(d, n, sigma, seed)
    dim = d * d

    # Accumulate the d^2 x d^2 second moment over column chunks of Z.
    second = np.zeros((dim, dim))
    mean = np.zeros(dim)
    chunk = max(1, (1 << 20) // dim)
    for lo in range(0, n, chunk):
        cols = X[:, lo : lo + chunk]
        Zc = (cols[:, None, :] * cols[None, :, :]).reshape(dim, -1)
        second += Zc @ Zc.T
        mean += Zc.sum(axis=1)
    mean /= n
    cov = second / n - np.outer(mean, mean)

    ref = sigma if reference is None else np.asarray(reference, dtype=np.float64)
    target = 2.0 * np.kron(ref, ref)
    basis = symmetric_basis(d)
    delta = basis.T @ (cov - target) @ basis
    return float(np.abs(np.linalg.eigvalsh(delta)).max())
