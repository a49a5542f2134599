"""Matrix-free linear algebra over tensored samples.

A data set is held as a ``d x N`` float array ``Y`` whose *columns* are
samples.  Every column ``y`` implicitly defines the tensored point
``z = y (x) y`` in ``R^{d^2}``, i.e. the row-major flattening of the rank-one
matrix ``y y^T``.  The ``d^2 x N`` matrix ``Z`` of tensored points is never
materialized: all routines act on it through products with ``Y`` alone, so
peak memory stays ``O(d^2 + d*N)`` plus a fixed-size work buffer.

Conventions
-----------
* ``flatten``/``unflatten`` use row-major order, so
  ``flatten(A) @ flatten(B) == trace(A.T @ B)``.
* A weight vector ``w`` has one entry per column of ``Y``, each in ``[0, 1]``;
  its mass is ``w.sum()`` and is *not* required to be normalized to 1.
* ``mu(w)       = (1/mass) * sum_i w_i Z_i``
* ``M(w)        = (1/mass) * sum_i w_i (Z_i - mu)(Z_i - mu)^T``  (PSD)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DegenerateInputError, DimensionError, EmptyMassError

# Transient work arrays are capped near 8 MB of float64; products of the form
# (k, d, N) are computed in column chunks that respect this cap.
_BLOCK_ELEMS = 1 << 20

# The d^2 x N table of pairwise coordinate products is cached only when it
# fits in ~32 MB; above that every product is re-derived chunk by chunk so no
# Theta(d^2 * N) allocation ever happens at large scale.
_CACHE_ELEMS = 1 << 22


# ---------------------------------------------------------------------------
# flattening and validation
# ---------------------------------------------------------------------------

def flatten(mat: np.ndarray) -> np.ndarray:
    """Row-major flattening of a square matrix into a length-``d^2`` vector."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {mat.shape}")
    return mat.reshape(-1)


def unflatten(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`flatten`; requires ``len(vec)`` to be a perfect square."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {vec.shape}")
    d = math.isqrt(vec.size)
    if d * d != vec.size:
        raise DimensionError(f"length {vec.size} is not a perfect square")
    return vec.reshape(d, d)


def as_sample_matrix(Y: np.ndarray) -> np.ndarray:
    """Validate and return a ``d x N`` float64 sample matrix."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise DimensionError(f"sample matrix must be 2-D, got shape {Y.shape}")
    if Y.shape[0] < 1 or Y.shape[1] < 1:
        raise DimensionError(f"sample matrix must be non-empty, got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise DegenerateInputError("sample matrix contains non-finite entries")
    return Y


def as_weight_vector(w: np.ndarray, n: int, require_mass: bool = False) -> np.ndarray:
    """Validate a weight vector: one entry per sample, each within [0, 1]."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise DimensionError(f"weight vector must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DegenerateInputError("weight vector contains non-finite entries")
    if w.min(initial=0.0) < -1e-12 or w.max(initial=0.0) > 1.0 + 1e-12:
        raise DimensionError("weight entries must lie in [0, 1]")
    w = np.clip(w, 0.0, 1.0)
    if require_mass and w.sum() <= 0.0:
        raise EmptyMassError("weight vector has zero total mass")
    return w


# ---------------------------------------------------------------------------
# operator handle
# ---------------------------------------------------------------------------

@dataclass
class MatVecHandle:
    """Opaque symmetric operator on ``R^{dim}`` exposed through products.

    ``matmat`` maps a ``(dim, k)`` block to a ``(dim, k)`` block;
    ``norm_bound``, when present, is a stated upper bound on the spectral
    norm (used to pick Taylor degrees).
    """

    dim: int
    matmat: Callable[[np.ndarray], np.ndarray]
    norm_bound: Optional[float] = None

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1:
            if v.size != self.dim:
                raise DimensionError(f"operand length {v.size} != dim {self.dim}")
            return self.matmat(v[:, None])[:, 0]
        if v.ndim != 2 or v.shape[0] != self.dim:
            raise DimensionError(f"operand shape {v.shape} incompatible with dim {self.dim}")
        return self.matmat(v)


# ---------------------------------------------------------------------------
# tensored-sample operations
# ---------------------------------------------------------------------------

class ZOps:
    """Bundles matrix-free products with the implicit tensored matrix ``Z``.

    Constructing one of these per sample matrix lets repeat callers (score
    oracle, filters) share the small-dimension product cache; the module-level
    functions below wrap a throwaway instance.
    """

    def __init__(self, Y: np.ndarray, cache: Optional[bool] = None):
        self.Y = as_sample_matrix(Y)
        self.d, self.n = self.Y.shape
        self.dim = self.d * self.d
        if cache is None:
            cache = self.dim * self.n <= _CACHE_ELEMS
        self._products = None
        if cache:
            # (d, 1, N) * (1, d, N) -> all coordinate pair products, d^2 x N
            self._products = (self.Y[:, None, :] * self.Y[None, :, :]).reshape(
                self.dim, self.n
            )

    # -- raw Z products ----------------------------------------------------

    def z_matvec(self, v: np.ndarray) -> np.ndarray:
        """``Z @ v`` for ``v`` of length N, i.e. ``flatten(Y diag(v) Y^T)``."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise DimensionError(f"expected length-{self.n} vector, got {v.shape}")
        return ((self.Y * v) @ self.Y.T).reshape(-1)

    def z_matmat(self, B: np.ndarray) -> np.ndarray:
        """``Z @ B`` for an ``(N, k)`` block, returned as ``(d^2, k)``."""
        B = np.asarray(B, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] != self.n:
            raise DimensionError(f"expected (N, k) block, got {B.shape}")
        if self._products is not None:
            return self._products @ B
        k = B.shape[1]
        out = np.empty((self.dim, k))
        chunk = max(1, _BLOCK_ELEMS // (self.d * self.n))
        for lo in range(0, k, chunk):
            hi = min(k, lo + chunk)
            scaled = B.T[lo:hi, None, :] * self.Y[None, :, :]   # (c, d, N)
            out[:, lo:hi] = (scaled @ self.Y.T).reshape(hi - lo, self.dim).T
        return out

    def z_transpose_matvec(self, u: np.ndarray) -> np.ndarray:
        """``Z^T @ u``: entry ``i`` equals ``Y_i^T unflatten(u) Y_i``."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dim,):
            raise DimensionError(f"expected length-{self.dim} vector, got {u.shape}")
        U = u.reshape(self.d, self.d)
        return np.einsum("dn,dn->n", self.Y, U @ self.Y)

    def z_transpose_matmat(self, U: np.ndarray) -> np.ndarray:
        """``Z^T @ U`` for a ``(d^2, k)`` block, returned as ``(N, k)``."""
        U = np.asarray(U, dtype=np.float64)
        if U.ndim != 2 or U.shape[0] != self.dim:
            raise DimensionError(f"expected (d^2, k) block, got {U.shape}")
        if self._products is not None:
            return self._products.T @ U
        k = U.shape[1]
        out = np.empty((self.n, k))
        chunk = max(1, _BLOCK_ELEMS // (self.d * self.n))
        for lo in range(0, k, chunk):
            hi = min(k, lo + chunk)
            mats = U.T[lo:hi].reshape(hi - lo, self.d, self.d)
            out[:, lo:hi] = np.einsum("cdn,dn->cn", mats @ self.Y, self.Y).T
        return out

    # -- weighted moments ----------------------------------------------------

    def weighted_mean(self, w: np.ndarray) -> np.ndarray:
        """``mu(w)``, the w-weighted mean of the tensored points."""
        w = as_weight_vector(w, self.n, require_mass=True)
        return self.z_matvec(w) / w.sum()

    def m_matmat(
        self, w: np.ndarray, V: np.ndarray, mu: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """``M(w) @ V`` without forming the ``d^2 x d^2`` second-moment matrix."""
        w = as_weight_vector(w, self.n, require_mass=True)
        V = np.asarray(V, dtype=np.float64)
        vec = V.ndim == 1
        if vec:
            V = V[:, None]
        if V.shape[0] != self.dim:
            raise DimensionError(f"expected (d^2, k) block, got {V.shape}")
        if mu is None:
            mu = self.weighted_mean(w)
        a = self.z_transpose_matmat(V)
        a -= mu @ V                       # row of <mu, v_j>, broadcast over N
        b = (w / w.sum())[:, None] * a
        out = self.z_matmat(b)
        out -= np.outer(mu, b.sum(axis=0))
        return out[:, 0] if vec else out

    def msum_matmat(
        self,
        weights: Sequence[np.ndarray],
        V: np.ndarray,
        mus: Optional[Sequence[np.ndarray]] = None,
        coeff: float = 1.0,
    ) -> np.ndarray:
        """``coeff * sum_i M(w_i) @ V`` sharing the two large products.

        ``Z^T V`` and one ``Z @ (...)`` are computed once; each additional
        weight vector only contributes elementwise column scalings and a
        rank-one correction, so the cost is flat in ``len(weights)``.
        """
        V = np.asarray(V, dtype=np.float64)
        vec = V.ndim == 1
        if vec:
            V = V[:, None]
        if V.shape[0] != self.dim:
            raise DimensionError(f"expected (d^2, k) block, got {V.shape}")
        ws = [as_weight_vector(w, self.n, require_mass=True) for w in weights]
        if mus is None:
            mus = [self.weighted_mean(w) for w in ws]
        wbar = np.stack([w / w.sum() for w in ws])       # (t, N)
        mu_stack = np.stack(mus)                          # (t, d^2)
        out = self._msum_core(wbar, mu_stack, V, coeff)
        return out[:, 0] if vec else out

    def _msum_core(
        self, wbar: np.ndarray, mu_stack: np.ndarray, V: np.ndarray, coeff: float
    ) -> np.ndarray:
        # sum_i M(w_i) = Z diag(sum_i wbar_i) Z^T - sum_i mu_i mu_i^T, so the
        # whole weight history collapses into two large products plus a
        # rank-t correction; cost is flat in the history length.
        g = self.z_transpose_matmat(V)                    # (N, k), shared
        out = self.z_matmat(wbar.sum(axis=0)[:, None] * g)
        out -= mu_stack.T @ (mu_stack @ V)
        if coeff != 1.0:
            out *= coeff
        return out

    def msum_handle(
        self, weights: Sequence[np.ndarray], coeff: float = 1.0
    ) -> MatVecHandle:
        """Handle for ``coeff * sum_i M(w_i)`` with inputs validated once."""
        ws = [as_weight_vector(w, self.n, require_mass=True) for w in weights]
        wbar = np.stack([w / w.sum() for w in ws])
        mu_stack = np.stack([self.z_matvec(wb) for wb in wbar])
        sq = np.einsum("dn,dn->n", self.Y, self.Y) ** 2
        bound = abs(coeff) * float(
            (wbar @ sq - np.einsum("kd,kd->k", mu_stack, mu_stack)).sum()
        )

        def matmat(V: np.ndarray) -> np.ndarray:
            return self._msum_core(wbar, mu_stack, V, coeff)

        return MatVecHandle(dim=self.dim, matmat=matmat, norm_bound=bound)

    def trace_m(self, w: np.ndarray) -> float:
        """``trace(M(w))`` in ``O(dN)``: weighted fourth moments minus ``|mu|^2``."""
        w = as_weight_vector(w, self.n, require_mass=True)
        mu = self.weighted_mean(w)
        sq = np.einsum("dn,dn->n", self.Y, self.Y)
        return float((w / w.sum()) @ sq ** 2 - mu @ mu)

    def m_handle(self, w: np.ndarray, shift: float = 0.0) -> MatVecHandle:
        """Handle for ``M(w) - shift*I`` with a cheap trace-based norm bound."""
        w = as_weight_vector(w, self.n, require_mass=True)
        bound = self.trace_m(w) + abs(shift)
        wbar = (w / w.sum())[None, :]
        mu_stack = self.z_matvec(wbar[0])[None, :]

        def matmat(V: np.ndarray) -> np.ndarray:
            out = self._msum_core(wbar, mu_stack, V, 1.0)
            if shift != 0.0:
                out -= shift * V
            return out

        return MatVecHandle(dim=self.dim, matmat=matmat, norm_bound=bound)


def z_matvec(Y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``sum_i v_i Z_i`` as a length-``d^2`` vector."""
    return ZOps(Y, cache=False).z_matvec(v)


def z_transpose_matvec(Y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inner products ``<Z_i, u>`` for every sample, as a length-N vector."""
    return ZOps(Y, cache=False).z_transpose_matvec(u)


def weighted_mean(Y: np.ndarray, w: np.ndarray) -> np.ndarray:
    return ZOps(Y, cache=False).weighted_mean(w)


def m_matvec(Y: np.ndarray, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the weighted second-moment operator ``M(w)`` to ``v``."""
    return ZOps(Y, cache=False).m_matmat(w, v)


# ---------------------------------------------------------------------------
# truncated matrix exponential and sketching
# ---------------------------------------------------------------------------

def taylor_expm_apply(
    A: MatVecHandle, v: np.ndarray, ell: Optional[int] = None, tol: float = 1e-6
) -> np.ndarray:
    """Apply the degree-``ell`` Taylor prefix of ``exp(A)`` to ``v``.

    ``v`` may be a vector or a ``(dim, k)`` block; the cost is ``ell`` handle
    products either way.  With ``ell=None`` the degree is chosen adaptively:
    starting from the handle's norm bound, terms are added until the last
    term is below ``tol`` of the accumulated sum.
    """
    v = np.asarray(v, dtype=np.float64)
    if ell is not None:
        if ell < 0:
            raise ValueError("Taylor degree must be non-negative")
        result = v.copy()
        term = v
        for k in range(1, ell + 1):
            term = A(term) / k
            result = result + term
        return result

    cap = max(64, 4 * math.ceil(A.norm_bound or 1.0) + 64)
    result = v.copy()
    term = v
    k = 0
    while k < cap:
        k += 1
        term = A(term) / k
        result = result + term
        if k >= 4 and np.linalg.norm(term) <= tol * np.linalg.norm(result):
            break
    return result


class JLSketch:
    """Gaussian sketch with ``r`` rows of i.i.d. ``N(0, 1/r)`` entries.

    Rows are reproducible from ``seed`` alone and can be generated in blocks,
    so callers may stream over them without holding the full ``r x m`` matrix.
    """

    def __init__(self, r: int, m: int, seed: int):
        if r < 1 or m < 1:
            raise DimensionError("sketch needs r >= 1 rows and m >= 1 columns")
        self.r = int(r)
        self.m = int(m)
        self.seed = int(seed)
        self._matrix: Optional[np.ndarray] = None

    def row_block(self, lo: int, hi: int) -> np.ndarray:
        """Rows ``lo:hi`` as an ``(hi-lo, m)`` array."""
        scale = self.r ** -0.5
        block = np.empty((hi - lo, self.m))
        for i in range(lo, hi):
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(i,))
            block[i - lo] = np.random.default_rng(ss).standard_normal(self.m)
        return block * scale

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = self.row_block(0, self.r)
        return self._matrix


def sketch_exp(J: JLSketch, A: MatVecHandle, ell: int) -> np.ndarray:
    """``J @ P_ell(A)`` where ``P_ell`` is the Taylor prefix of ``exp``.

    Computed block-by-block as ``(P_ell(A) J^T)^T`` using the symmetry of
    ``A``; the result is a dense ``r x dim`` array (small: ``r`` grows only
    logarithmically), while intermediates stay within the fixed block budget.
    """
    if J.m != A.dim:
        raise DimensionError(f"sketch width {J.m} != operator dim {A.dim}")
    S = np.empty((J.r, A.dim))
    chunk = max(1, min(J.r, _BLOCK_ELEMS // A.dim))
    for lo in range(0, J.r, chunk):
        hi = min(J.r, lo + chunk)
        S[lo:hi] = taylor_expm_apply(A, J.row_block(lo, hi).T, ell).T
    return S


# ---------------------------------------------------------------------------
# spectral norm estimation
# ---------------------------------------------------------------------------

def power_method(
    A: MatVecHandle,
    iters: int,
    seed: int,
    restarts: int = 1,
    inflation: float = 1.05,
) -> float:
    """Estimate ``||A||_2`` for symmetric ``A`` by blocked power iteration.

    Runs ``restarts`` independent Gaussian starts as one block; the estimate
    for each start is ``||A x||`` after the final normalized iterate (robust
    to paired +/- eigenvalues).  The best estimate is inflated by a fixed
    factor to offset the systematic underestimate of finitely many steps.
    """
    if iters < 1 or restarts < 1:
        raise ValueError("power method needs iters >= 1 and restarts >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((A.dim, restarts))
    X /= np.linalg.norm(X, axis=0)
    est = np.zeros(restarts)
    for _ in range(iters):
        Xn = A(X)
        norms = np.linalg.norm(Xn, axis=0)
        est = np.maximum(est, norms)
        alive = norms > 0
        if not alive.any():
            return 0.0
        X = np.where(alive, Xn / np.where(alive, norms, 1.0), X)
    return float(est.max() * inflation)


def default_power_iters(dim: int) -> int:
    """Iterations giving ~10% accuracy with high probability at dimension ``dim``."""
    return max(8, math.ceil(12 * math.log(max(dim, 2))))


# ---------------------------------------------------------------------------
# symmetric-subspace helpers
# ---------------------------------------------------------------------------

def symmetric_basis(d: int) -> np.ndarray:
    """Orthonormal basis of flattened symmetric ``d x d`` matrices.

    Returns a ``(d^2, d(d+1)/2)`` array with orthonormal columns.  Tensored
    points and all weighted moments live in this subspace, so spectral
    comparisons against reference covariances are performed inside it.
    """
    cols = []
    for i in range(d):
        for j in range(i, d):
            B = np.zeros((d, d))
            if i == j:
                B[i, i] = 1.0
            else:
                B[i, j] = B[j, i] = 1.0 / math.sqrt(2.0)
            cols.append(B.reshape(-1))
    return np.array(cols).T
