"""Coarse outlier removal on tensored points via randomized anchor balls.

A candidate sample is drawn uniformly; if strictly more than half of all
tensored points fall within ``2r`` of its tensored point, every point within
``4r`` is kept and the rest are dropped.  Otherwise a fresh candidate is
drawn, up to ``ceil(log2(1/delta))`` attempts.  Distances are measured after
a Johnson-Lindenstrauss projection of the ``d^2``-dimensional tensored
points, so the cost stays ``O(r_jl * d^2 * N)`` with ``r_jl``
logarithmic; thresholds carry a 1% slack for the projection distortion.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import PruneFailure
from .tensor_linalg import JLSketch, ZOps

_JL_SLACK = 1.01


def jl_rows(n: int, dim: int) -> int:
    """Projection rows used for pruning at ``n`` samples in ``R^dim``."""
    return max(8, math.ceil(24.0 * math.log(max(n, dim, 2))))


def naive_prune(
    Y: np.ndarray, radius: float, delta: float = 0.01, seed: int = 0
) -> np.ndarray:
    """Indices of samples whose tensored points sit in the dominant ball.

    ``radius`` is the ball radius ``r`` believed to contain a majority of the
    tensored points.  Raises :class:`PruneFailure` when no candidate anchor
    captures a majority within the allotted rounds (all rounds are decided on
    anchors drawn up front, so the outcome is a deterministic function of the
    inputs and ``seed``).
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    ops = ZOps(Y)
    n = ops.n
    rounds = max(1, math.ceil(math.log2(1.0 / delta)))
    rng = np.random.default_rng(seed)
    anchors = rng.integers(0, n, size=rounds)

    # Squared JL distances from every tensored point to each anchor's,
    # accumulated over row blocks of the sketch (the full projected point set
    # is never stored).
    sketch = JLSketch(jl_rows(n, ops.dim), ops.dim, seed=seed)
    dist_sq = np.zeros((rounds, n))
    block = max(1, (1 << 20) // max(n, 1))
    for lo in range(0, sketch.r, block):
        hi = min(sketch.r, lo + block)
        rows = sketch.row_block(lo, hi)          # (b, d^2)
        proj = ops.z_transpose_matmat(rows.T).T  # (b, n)
        for r_idx, anchor in enumerate(anchors):
            diff = proj - proj[:, anchor, None]
            dist_sq[r_idx] += np.einsum("bn,bn->n", diff, diff)

    within = (2.0 * radius * _JL_SLACK) ** 2
    keep_within = (4.0 * radius * _JL_SLACK) ** 2
    for r_idx in range(rounds):
        if (dist_sq[r_idx] <= within).sum() > n / 2.0:
            return np.flatnonzero(dist_sq[r_idx] <= keep_within)
    raise PruneFailure(
        f"no majority ball of radius {2 * radius:g} found in {rounds} rounds"
    )
