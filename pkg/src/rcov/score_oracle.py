"""Outlier scores from a spectral witness of the weighted second moment.

Given the weight history ``w_0 .. w_t`` of a downweighting run, each sample
is scored by how much energy its centered tensored point has in the
directions where the second-moment operators ``M(w_i)`` have been large:

``tau_i ~ (Z_i - mu)^T U (Z_i - mu)``  with  ``U = exp(alpha * sum M(w_i)) / trace``.

The exponential is never formed.  A Johnson-Lindenstrauss sketch ``J`` is
pushed through a truncated Taylor polynomial of ``A = (alpha/2) * sum M(w_i)``
to get ``S = J P_ell(A)``; then ``tau_i = |S (Z_i - mu)|^2 / nu`` with
``nu = trace(S S^T)``, which estimates the exact quantity because
``P_ell(A)^2 ~ exp(2A)``.  The attribution ``q = <M(w_t) - I, U>`` falls out
of the same quantities as a weighted average of the scores, and the spectral
size ``lam ~ |M(w_t) - I|_2`` comes from a restarted power method.

All randomness is derived from a single integer seed; repeated calls with
identical inputs return identical reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import BudgetExceededError, DegenerateInputError, SpecError
from .tensor_linalg import (
    JLSketch,
    ZOps,
    as_weight_vector,
    default_power_iters,
    power_method,
    taylor_expm_apply,
)

__all__ = [
    "OracleParams",
    "ScoreReport",
    "approximate_score",
    "choose_alpha",
    "default_sketch_rows",
    "exact_score",
]

_EXACT_MAX_D = 8


def default_sketch_rows(n: int, dim: int, delta: float = 0.01) -> int:
    """Sketch rows giving ~10% relative score accuracy for all ``n`` points.

    The max of ``n + dim`` scaled chi-square concentration terms has to stay
    inside the score tolerance with probability ``1 - delta``, which costs a
    large constant over the usual norm-preservation row count.
    """
    return math.ceil(380.0 * math.log(3.0 * (n + dim) / delta))


def choose_alpha(lambda_history: Sequence[float]) -> float:
    """Exponent scale keeping ``|alpha * sum M(w_i)|_2`` at most ``t``.

    Each ``1.1 * lam_i + 1`` dominates ``|M(w_i)|_2`` when ``lam_i`` is a
    10%-accurate estimate of ``|M(w_i) - I|_2``, so the returned value is
    safe for the Taylor degree chosen by :func:`approximate_score`.
    """
    t = len(lambda_history)
    if t == 0:
        return 1.0
    total = sum(1.1 * lam + 1.0 for lam in lambda_history)
    return t / max(total, 1.0)


@dataclass
class OracleParams:
    """Accuracy/seed knobs for :func:`approximate_score`.

    ``None`` fields fall back to defaults calibrated for ~10% score accuracy:
    sketch rows from :func:`default_sketch_rows`, Taylor degree
    ``max(ceil(2.6 t), 24)``, and power-method settings from the ambient
    dimension and ``delta``.  ``adaptive_ell`` (used only when ``ell`` is
    ``None``) lets the expm apply pick its own degree per block, stopping
    once terms stall; :func:`choose_alpha` keeps the witness exponent below
    ``t/2``, so the adaptive cap is safe and usually much cheaper than the
    fixed-degree default.
    """

    r: Optional[int] = None
    ell: Optional[int] = None
    power_iters: Optional[int] = None
    power_restarts: Optional[int] = None
    delta: float = 0.01
    seed: int = 0
    adaptive_ell: bool = False

    def with_seed(self, seed: int) -> "OracleParams":
        return replace(self, seed=seed)


@dataclass
class ScoreReport:
    """One round of scores: per-sample ``tau``, attribution ``q``, spectral
    size ``lam``, sketch normalization ``nu``, round index ``t`` and the
    ``alpha`` that produced them."""

    tau: np.ndarray
    q: float
    lam: float
    nu: float
    t: int
    alpha: float


def _validated_history(weights, n: int):
    if len(weights) == 0:
        raise SpecError("weight history must contain at least one vector")
    return [as_weight_vector(w, n, require_mass=True) for w in weights]


def approximate_score(
    Y: np.ndarray,
    weights: Sequence[np.ndarray],
    alpha: float,
    params: Optional[OracleParams] = None,
) -> ScoreReport:
    """Sketched scores for the last weight vector in ``weights``.

    ``weights`` is the full history ``[w_0, .., w_t]``; scores are computed
    for ``w_t`` against the witness built from the earlier rounds.  Work is
    ``O((r/ chunk) * ell)`` products with the sample matrix and memory stays
    ``O(chunk * max(N, d^2))`` beyond the input.
    """
    if params is None:
        params = OracleParams()
    if not np.isfinite(alpha) or alpha < 0:
        raise SpecError(f"alpha must be non-negative, got {alpha}")
    if params.r is not None and params.r < 1:
        raise SpecError(f"sketch rows must be >= 1, got {params.r}")
    if params.ell is not None and params.ell < 0:
        raise SpecError(f"Taylor degree must be >= 0, got {params.ell}")
    ops = ZOps(Y)
    n, dim = ops.n, ops.dim
    hist = _validated_history(weights, n)
    w_t = hist[-1]
    t = len(hist) - 1

    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    sketch_seed = int(rng.integers(np.iinfo(np.int64).max))
    power_seed = int(rng.integers(np.iinfo(np.int64).max))

    r = params.r if params.r is not None else default_sketch_rows(n, dim, params.delta)
    ell = params.ell if params.ell is not None else max(math.ceil(2.6 * t), 24)

    mu_t = ops.weighted_mean(w_t)
    if t > 0 and alpha > 0:
        witness = ops.msum_handle(hist[:-1], coeff=0.5 * alpha)
        if params.adaptive_ell and params.ell is None:
            # alpha from choose_alpha keeps ||witness|| <= t/2; the slack
            # unit absorbs the 10% estimation error baked into that bound.
            witness.norm_bound = 0.5 * t + 1.0
            ell = None
    else:
        witness = None  # S = J: exp(0) is the identity

    sketch = JLSketch(r, dim, seed=sketch_seed)
    chunk = max(1, min(r, (1 << 22) // max(n, dim)))
    nu = 0.0
    tau_num = np.zeros(n)
    for lo in range(0, r, chunk):
        hi = min(r, lo + chunk)
        rows = sketch.row_block(lo, hi)                       # (b, d^2)
        if witness is not None:
            rows = taylor_expm_apply(witness, rows.T, ell=ell, tol=1e-5).T
        nu += float(np.einsum("bf,bf->", rows, rows))
        proj = ops.z_transpose_matmat(rows.T)                 # (N, b)
        proj -= rows @ mu_t
        tau_num += np.einsum("nb,nb->n", proj, proj)
    if not np.isfinite(nu) or nu <= 0.0:
        raise DegenerateInputError(f"sketch normalization collapsed (nu={nu})")

    tau = tau_num / nu
    q = float(w_t @ tau / w_t.sum() - 1.0)

    iters = (
        params.power_iters
        if params.power_iters is not None
        else default_power_iters(dim)
    )
    restarts = (
        params.power_restarts
        if params.power_restarts is not None
        else max(6, math.ceil(math.log(1.0 / params.delta)))
    )
    lam = power_method(
        ops.m_handle(w_t, shift=1.0), iters=iters, seed=power_seed, restarts=restarts
    )
    return ScoreReport(tau=tau, q=q, lam=lam, nu=nu, t=t, alpha=alpha)


def exact_score(
    Y: np.ndarray, weights: Sequence[np.ndarray], alpha: float
) -> ScoreReport:
    """Dense reference scores via an eigendecomposition of the witness.

    Only small ambient dimensions are accepted; cost is ``O(d^6 + d^4 N)``.
    """
    from .testing import dense_m, dense_z

    if not np.isfinite(alpha) or alpha < 0:
        raise SpecError(f"alpha must be non-negative, got {alpha}")
    ops = ZOps(Y)
    if ops.d > _EXACT_MAX_D:
        raise BudgetExceededError(
            f"exact scores are dense in d^2={ops.dim}; refusing d={ops.d} > {_EXACT_MAX_D}"
        )
    hist = _validated_history(weights, ops.n)
    w_t = hist[-1]
    t = len(hist) - 1
    dim = ops.dim

    A = np.zeros((dim, dim))
    for w in hist[:-1]:
        A += dense_m(Y, w)
    A *= alpha
    vals, vecs = np.linalg.eigh(A)
    expvals = np.exp(vals - vals.max())
    with np.errstate(over="ignore"):
        nu = float(expvals.sum() * np.exp(vals.max()))
    U = (vecs * (expvals / expvals.sum())) @ vecs.T

    Z = dense_z(Y)
    mu_t = Z @ w_t / w_t.sum()
    C = Z - mu_t[:, None]
    tau = np.einsum("fn,fn->n", C, U @ C)

    M_t = dense_m(Y, w_t)
    shifted = M_t - np.eye(dim)
    q = float((shifted * U).sum())
    lam = float(np.abs(np.linalg.eigvalsh(shifted)).max())
    return ScoreReport(tau=tau, q=q, lam=lam, nu=nu, t=t, alpha=alpha)
