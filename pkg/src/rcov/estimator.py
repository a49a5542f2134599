"""End-to-end robust covariance estimation for zero-mean data.

The pipeline contracts a crude spectral upper bound ``Sigma_0`` down to the
target in two phases.  Each round whitens by the current bound, prunes the
tensored points, runs the soft filter, and reads the new estimate off the
filtered mean of the tensored points:

    Y = Sigma_t^{-1/2} X,   Sigma_hat = Sigma_t^{1/2} mat(mu_hat) Sigma_t^{1/2}.

First-phase rounds use the coarse filter and raise the bound additively
(``Sigma_{t+1} = Sigma_hat + c * sqrt(eps) * Sigma_t``), shrinking the gap
geometrically.  Second-phase rounds use the fine filter and track the scalar
contraction ``zeta_{t+1} = c1 * sqrt(eps * zeta_t) + c2 * eps * log(1/eps)``.
All constants are frozen fields of :class:`EstimatorConfig` so runs are
reproducible and recalibration is explicit.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy import stats

from .exceptions import DegenerateInputError, PruneFailure, SpecError
from .prune import naive_prune
from .que_filter import FilterConfig, FilterResult, filter_coarse, filter_fine
from .score_oracle import OracleParams
from .tensor_linalg import as_sample_matrix, unflatten

__all__ = [
    "CovarianceEstimate",
    "EstimatorConfig",
    "PhaseRecord",
    "first_phase",
    "initial_upper_bound",
    "mahalanobis_error",
    "robust_covariance",
    "second_phase",
]


def _xlog(eps: float) -> float:
    """``eps * log(1/eps)`` extended continuously by 0 at eps = 0."""
    return eps * math.log(1.0 / eps) if eps > 0.0 else 0.0


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _whitened_gap(candidate: np.ndarray, base: np.ndarray) -> float:
    """Frobenius gap between two matrices in the metric of ``base``.

    Raw Frobenius comparisons are blind to progress along small
    eigendirections when the spectrum is spread; measuring in the ``base``
    metric weighs every direction equally.  Singular ``base`` reads as an
    infinite gap (no stopping on a degenerate estimate).
    """
    try:
        return mahalanobis_error(candidate, base)
    except DegenerateInputError:
        return math.inf


def _psd_clip(M: np.ndarray, floor_ratio: float = 0.0) -> np.ndarray:
    """Clip eigenvalues of a symmetric matrix at ``floor_ratio * lambda_max``."""
    M = _symmetrize(M)
    vals, vecs = np.linalg.eigh(M)
    floor = floor_ratio * max(float(vals.max()), 0.0)
    clipped = np.clip(vals, floor, None)
    return _symmetrize((vecs * clipped) @ vecs.T)


def _sqrt_pair(sigma: np.ndarray):
    """Symmetric square root and inverse square root of a PD matrix.

    Raises if ``sigma`` is not invertible; eigenvalues are floored at
    ``1e-12 * lambda_max`` inside the inverse for numerical stability.
    """
    sigma = _symmetrize(np.asarray(sigma, dtype=np.float64))
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() <= 0.0:
        raise DegenerateInputError(
            f"matrix is not positive definite (min eigenvalue {vals.min():.3e})"
        )
    floored = np.maximum(vals, 1e-12 * vals.max())
    sqrt = _symmetrize((vecs * np.sqrt(floored)) @ vecs.T)
    inv_sqrt = _symmetrize((vecs / np.sqrt(floored)) @ vecs.T)
    return sqrt, inv_sqrt


def mahalanobis_error(sigma_hat: np.ndarray, sigma_true: np.ndarray) -> float:
    """``|Sigma_true^{-1/2} Sigma_hat Sigma_true^{-1/2} - I|_F``.

    The first argument is the estimate, the second the reference; the
    reference must be positive definite.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    _, inv_sqrt = _sqrt_pair(sigma_true)
    d = sigma_hat.shape[0]
    return float(np.linalg.norm(inv_sqrt @ sigma_hat @ inv_sqrt - np.eye(d)))


def _trimmed_coordinate_scales(X: np.ndarray, epsilon: float) -> np.ndarray:
    """Per-coordinate variance estimates robust to an epsilon fraction.

    Each coordinate's squared values are trimmed by ``2 * epsilon`` from each
    tail and averaged; dividing by the same trimmed mean of a chi-square(1)
    variable makes the estimate unbiased on Gaussian inliers.
    """
    d, n = X.shape
    frac = min(2.0 * epsilon, 0.2)
    k = int(frac * n)
    sq = np.sort(X * X, axis=1)
    if k > 0:
        sq = sq[:, k : n - k]
    means = sq.mean(axis=1)
    if k > 0:
        lo = stats.chi2(1).ppf(k / n)
        hi = stats.chi2(1).ppf(1.0 - k / n)
        # E[X 1{X <= q}] = P(chi2_3 <= q) for X ~ chi2_1
        correction = (stats.chi2(3).cdf(hi) - stats.chi2(3).cdf(lo)) / (
            1.0 - 2.0 * k / n
        )
        means = means / correction
    return means


def initial_upper_bound(
    X: np.ndarray, epsilon: float, c0: float = 4.0
) -> np.ndarray:
    """Crude spectral upper bound ``c0 * s_hat * I``.

    ``s_hat`` is the largest trimmed-and-debiased coordinate variance, so the
    bound dominates diagonal covariances outright and general ones up to the
    correlation spread the refinement phases absorb; trimming keeps arbitrary
    corruption from inflating the scale.
    """
    X = as_sample_matrix(X)
    d, n = X.shape
    if n < 10 * d:
        raise SpecError(f"need at least 10*d={10 * d} samples, got {n}")
    if not 0.0 <= epsilon < 0.25:
        raise SpecError(f"epsilon must be in [0, 1/4), got {epsilon}")
    s_hat = float(_trimmed_coordinate_scales(X, epsilon).max())
    if s_hat <= 0.0:
        raise DegenerateInputError("all-zero data: no usable coordinate scale")
    return c0 * s_hat * np.eye(d)


@dataclass
class EstimatorConfig:
    """Frozen constants and knobs of the two-phase driver.

    ``coarse_filter`` / ``fine_filter`` override the per-phase filter
    configurations entirely; left ``None`` they are built from the scalar
    fields below with seeds derived from ``seed``.
    """

    epsilon: float = 0.05
    seed: int = 0
    kappa_hint: Optional[float] = None
    t1_override: Optional[int] = None
    t2_override: Optional[int] = None
    coarse_filter: Optional[FilterConfig] = None
    fine_filter: Optional[FilterConfig] = None
    c0: float = 4.0                 # initial bound multiplier
    c_upper: float = 2.0            # sqrt(eps) coefficient raising the next bound
    zeta_entry_coeff: float = 4.0   # zeta at second-phase entry: coeff * sqrt(eps)
    zeta_c1: float = 2.0
    zeta_c2: float = 8.0
    zeta0: float = 0.5              # largest zeta a fine round will trust
    second_margin: float = 0.2      # fraction of the old bound kept each fine round
    prune_c: float = 4.0            # prune radius: prune_c * d * log N (whitened)
    prune_delta: float = 0.01
    eps_max: float = 0.05           # breakdown guard
    filter_sketch_rows: int = 16
    filter_power_iters: int = 16
    filter_power_restarts: int = 2
    filter_max_rounds: int = 20         # per coarse filter run
    fine_filter_max_rounds: int = 45    # per fine filter run
    early_stop_rel: float = 0.03    # first phase stops when the bound stabilizes
    second_early_stop_rel: float = 0.05  # second phase stops when the estimate does
    certificate_tightness: float = 3.0  # max bound/estimate stretch for early exit

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= self.eps_max:
            raise SpecError(
                f"epsilon must be in [0, {self.eps_max}], got {self.epsilon}"
            )
        if not 0.0 <= self.second_margin < 1.0:
            raise SpecError(
                f"second_margin must be in [0, 1), got {self.second_margin}"
            )


@dataclass
class PhaseRecord:
    """Diagnostics for one refinement round."""

    phase: str                      # 'first' | 'second'
    index: int
    sigma_hat: np.ndarray
    upper_bound: np.ndarray         # the bound used for whitening this round
    zeta_raw: Optional[float]       # scalar recurrence value (second phase)
    zeta_used: Optional[float]      # value actually trusted by the round
    kept: int
    prune_failed: bool
    filter_rounds: int
    stop_reason: str
    mass_fraction: float
    lambdas: List[float]
    qs: List[float]
    wall_ms: float


@dataclass
class CovarianceEstimate:
    """Final estimate plus the full provenance trail of both phases."""

    sigma_hat: np.ndarray
    upper_bound: np.ndarray
    zeta: float
    phase: str
    iteration: int
    epsilon: float
    seed: int
    records: List[PhaseRecord] = field(default_factory=list)

    @property
    def total_oracle_rounds(self) -> int:
        return sum(r.filter_rounds for r in self.records)

    def to_dict(self, include_timing: bool = True, include_trace: bool = True):
        phases = []
        for r in self.records:
            entry = {
                "phase": r.phase,
                "index": r.index,
                "zeta_raw": r.zeta_raw,
                "zeta_used": r.zeta_used,
                "kept": r.kept,
                "prune_failed": r.prune_failed,
                "filter_rounds": r.filter_rounds,
                "stop_reason": r.stop_reason,
                "mass_fraction": r.mass_fraction,
                "wall_ms": r.wall_ms if include_timing else 0.0,
            }
            if include_trace:
                entry["lambdas"] = list(r.lambdas)
                entry["qs"] = list(r.qs)
            phases.append(entry)
        d = self.sigma_hat.shape[0]
        return {
            "d": d,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "sigma_hat": [float(v) for v in self.sigma_hat.reshape(-1)],
            "upper_bound": [float(v) for v in self.upper_bound.reshape(-1)],
            "zeta": self.zeta,
            "phase": self.phase,
            "iteration": self.iteration,
            "total_oracle_rounds": self.total_oracle_rounds,
            "phases": phases,
        }

    def to_json(self, include_timing: bool = True, include_trace: bool = True) -> str:
        return json.dumps(
            self.to_dict(include_timing=include_timing, include_trace=include_trace),
            indent=2,
            sort_keys=True,
        )


def _derived_seeds(seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    vals = rng.integers(np.iinfo(np.int64).max, size=4)
    return tuple(int(v) for v in vals)


def _phase_filter_config(
    config: EstimatorConfig, seed: int, fine: bool = False
) -> FilterConfig:
    return FilterConfig(
        epsilon=config.epsilon,
        max_rounds=config.fine_filter_max_rounds if fine else config.filter_max_rounds,
        oracle=OracleParams(
            r=config.filter_sketch_rows,
            power_iters=config.filter_power_iters,
            power_restarts=config.filter_power_restarts,
            adaptive_ell=True,
        ),
        seed=seed,
    )


def _whiten_prune_filter(
    X: np.ndarray,
    sigma_t: np.ndarray,
    config: EstimatorConfig,
    filter_cfg: FilterConfig,
    prune_seed: int,
    fine: bool,
):
    """Shared round body: whiten, prune, filter, reconstruct."""
    d, n = X.shape
    sqrt_t, inv_sqrt_t = _sqrt_pair(sigma_t)
    Y = inv_sqrt_t @ X
    radius = config.prune_c * d * math.log(max(n, 2))
    prune_failed = False
    try:
        kept = naive_prune(Y, radius, delta=config.prune_delta, seed=prune_seed)
    except PruneFailure:
        kept = np.arange(n)
        prune_failed = True
    Yk = Y[:, kept]
    if fine:
        result: FilterResult = filter_fine(Yk, filter_cfg)
    else:
        result = filter_coarse(Yk, filter_cfg, sigma=1.0)
    sigma_tilde = _symmetrize(unflatten(result.mu_hat))
    sigma_hat = _psd_clip(sqrt_t @ sigma_tilde @ sqrt_t)
    return sigma_hat, kept, prune_failed, result


def first_phase(
    X: np.ndarray,
    sigma_t: np.ndarray,
    epsilon: float,
    config: Optional[EstimatorConfig] = None,
    filter_cfg: Optional[FilterConfig] = None,
    prune_seed: int = 0,
):
    """One coarse refinement round.

    Returns ``(sigma_next, sigma_hat, record)`` where ``sigma_next`` is the
    raised bound for the next round.  Prune failure and filter mass-floor
    stops are recorded on the returned :class:`PhaseRecord`, not raised.
    """
    if config is None:
        config = EstimatorConfig(epsilon=epsilon)
    if filter_cfg is None:
        filter_cfg = _phase_filter_config(config, _derived_seeds(config.seed)[1])
    start = time.perf_counter()
    sigma_hat, kept, prune_failed, res = _whiten_prune_filter(
        X, sigma_t, config, filter_cfg, prune_seed, fine=False
    )
    sigma_next = _psd_clip(
        sigma_hat + config.c_upper * math.sqrt(epsilon) * sigma_t,
        floor_ratio=1e-10,
    )
    record = PhaseRecord(
        phase="first",
        index=0,
        sigma_hat=sigma_hat,
        upper_bound=sigma_t,
        zeta_raw=None,
        zeta_used=None,
        kept=int(kept.size),
        prune_failed=prune_failed,
        filter_rounds=res.rounds_used,
        stop_reason=res.stop_reason,
        mass_fraction=float(res.final_weights.sum() / max(kept.size, 1)),
        lambdas=res.lambdas,
        qs=res.qs,
        wall_ms=(time.perf_counter() - start) * 1e3,
    )
    return sigma_next, sigma_hat, record


def second_phase(
    X: np.ndarray,
    sigma_t: np.ndarray,
    zeta_t: float,
    epsilon: float,
    config: Optional[EstimatorConfig] = None,
    filter_cfg: Optional[FilterConfig] = None,
    prune_seed: int = 0,
):
    """One fine refinement round; requires ``zeta_t <= zeta0``.

    Returns ``(sigma_hat, zeta_next, record)`` with
    ``zeta_next = c1 * sqrt(eps * zeta_t) + c2 * eps * log(1/eps)``.
    """
    if config is None:
        config = EstimatorConfig(epsilon=epsilon)
    if zeta_t > config.zeta0:
        raise SpecError(
            f"second phase requires zeta <= {config.zeta0}, got {zeta_t}"
        )
    if filter_cfg is None:
        filter_cfg = _phase_filter_config(
            config, _derived_seeds(config.seed)[3], fine=True
        )
    start = time.perf_counter()
    sigma_hat, kept, prune_failed, res = _whiten_prune_filter(
        X, sigma_t, config, filter_cfg, prune_seed, fine=True
    )
    zeta_next = config.zeta_c1 * math.sqrt(epsilon * zeta_t) + config.zeta_c2 * _xlog(
        epsilon
    )
    record = PhaseRecord(
        phase="second",
        index=0,
        sigma_hat=sigma_hat,
        upper_bound=sigma_t,
        zeta_raw=zeta_next,
        zeta_used=zeta_t,
        kept=int(kept.size),
        prune_failed=prune_failed,
        filter_rounds=res.rounds_used,
        stop_reason=res.stop_reason,
        mass_fraction=float(res.final_weights.sum() / max(kept.size, 1)),
        lambdas=res.lambdas,
        qs=res.qs,
        wall_ms=(time.perf_counter() - start) * 1e3,
    )
    return sigma_hat, zeta_next, record


def default_t1(kappa: float, d: int) -> int:
    return math.ceil(math.log2(max(kappa, 1.0) * d)) + 4


def default_t2_rounds(epsilon: float) -> int:
    if epsilon <= 0.0:
        return 3
    inner = math.log2(1.0 / epsilon)
    return math.ceil(math.log2(max(inner, 1.0 + 1e-9))) + 3


def robust_covariance(
    X: np.ndarray, config: Optional[EstimatorConfig] = None
) -> CovarianceEstimate:
    """Full two-phase robust covariance estimate with provenance.

    ``X`` holds one zero-mean sample per column.  Below ``N = d^2 / eps^2``
    samples a warning is issued (the error guarantees thin out), but the
    estimator still runs.
    """
    if config is None:
        config = EstimatorConfig()
    X = as_sample_matrix(X)
    d, n = X.shape
    eps = config.epsilon
    if eps > 0.0 and n < d * d / (eps * eps):
        warnings.warn(
            f"N={n} is below the recommended d^2/eps^2={d * d / eps / eps:.0f}; "
            "error guarantees degrade",
            RuntimeWarning,
            stacklevel=2,
        )
    prune1_seed, filter1_seed, prune2_seed, filter2_seed = _derived_seeds(config.seed)
    coarse_cfg = config.coarse_filter or _phase_filter_config(config, filter1_seed)
    fine_cfg = config.fine_filter or _phase_filter_config(
        config, filter2_seed, fine=True
    )

    sigma_t = initial_upper_bound(X, eps, c0=config.c0)
    scales = _trimmed_coordinate_scales(X, eps)
    if config.kappa_hint is not None:
        kappa = float(config.kappa_hint)
    else:
        kappa = float(scales.max() / max(scales.min(), 1e-30))
    t1 = config.t1_override if config.t1_override is not None else default_t1(kappa, d)
    t2 = (
        config.t2_override
        if config.t2_override is not None
        else default_t2_rounds(eps)
    )

    records: List[PhaseRecord] = []
    sigma_hat = sigma_t
    for k in range(t1):
        sigma_next, sigma_hat, rec = first_phase(
            X, sigma_t, eps, config, coarse_cfg, prune_seed=prune1_seed
        )
        rec.index = k
        records.append(rec)
        rel_change = _whitened_gap(sigma_next, sigma_t)
        sigma_t = sigma_next
        if rel_change <= config.early_stop_rel:
            break

    # The zeta trail is bookkeeping: it follows the scalar recurrence exactly
    # from its 4*sqrt(eps) entry value.  Each fine round trusts at most zeta0
    # of it, and the whitening bound is maintained separately with a small
    # fixed margin so that it tightens monotonically toward the estimate.
    # Once a round stops moving the estimate it is discarded and the loop
    # ends: past the fixed point further rounds only re-roll sampling noise.
    zeta_raw = config.zeta_entry_coeff * math.sqrt(eps)
    phase = "first"
    for k in range(t2):
        zeta_used = min(zeta_raw, config.zeta0)
        candidate, _, rec = second_phase(
            X, sigma_t, zeta_used, eps, config, fine_cfg, prune_seed=prune2_seed
        )
        if phase == "second":
            if _whitened_gap(candidate, sigma_hat) <= config.second_early_stop_rel:
                break
        sigma_hat = candidate
        zeta_raw = config.zeta_c1 * math.sqrt(eps * zeta_raw) + config.zeta_c2 * _xlog(
            eps
        )
        rec.index = k
        rec.zeta_raw = zeta_raw
        rec.zeta_used = zeta_used
        records.append(rec)
        sigma_t = _psd_clip(
            sigma_hat + config.second_margin * sigma_t, floor_ratio=1e-10
        )
        phase = "second"
        # Inlier-consistency certificate: the round ended with the weighted
        # spectral deviation inside the band inliers alone produce, AND its
        # whitening bound was already within a small factor of the estimate
        # in every direction (a loose bound shrinks directions so much that
        # leftover corruption hides below the cutoff).  Under both, further
        # passes could only trim inliers and deflate the estimate.
        lam_cutoff = 1.0 + fine_cfg.lambda_slack_fine * _xlog(eps)
        if rec.lambdas and rec.lambdas[-1] <= lam_cutoff:
            try:
                _, inv_root = _sqrt_pair(sigma_hat)
            except DegenerateInputError:
                continue
            stretch = np.linalg.eigvalsh(
                inv_root @ rec.upper_bound @ inv_root
            ).max()
            if stretch <= config.certificate_tightness:
                break

    return CovarianceEstimate(
        sigma_hat=sigma_hat,
        upper_bound=sigma_t,
        zeta=zeta_raw,
        phase=phase,
        iteration=len(records),
        epsilon=eps,
        seed=config.seed,
        records=records,
    )
