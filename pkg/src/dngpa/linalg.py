"""Dense linear algebra used across the package.

Matrices are plain 2-D ``float64`` numpy arrays with rows as samples.  The
truncated SVD here produces the frozen projection used as the first layer of
the SVD feature extractor, together with the quantities needed to bound how
much sample norm that projection can lose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

EXACT_SVD_MAX_DIM = 512


class LinalgError(ValueError):
    """Raised on shape or domain errors in linear-algebra routines."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise LinalgError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{name} contains non-finite values")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise LinalgError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


@dataclass
class SvdBasis:
    """Top-``k`` right singular subspace of a data matrix.

    ``W`` holds the first ``k`` right singular vectors as columns, so a row
    ``x`` projects to ``x @ W``.  ``tail_energy`` is the Frobenius norm of the
    discarded part of the spectrum, ``sqrt(sum_{j>k} sigma_j**2)``.
    """

    k: int
    singular_values: np.ndarray
    W: np.ndarray
    tail_energy: float
    frobenius_norm: float
    n_samples: int
    exact: bool

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    def project(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.W


def _fix_signs(v: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def _ritz(x: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rayleigh-Ritz on the row-space basis ``q`` (orthonormal columns)."""
    b = x @ q
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    return s, q @ vt.T


def _exact_row_basis(x: np.ndarray) -> np.ndarray:
    n, d = x.shape
    if d <= n:
        evals, evecs = np.linalg.eigh(x.T @ x)
        return evecs[:, ::-1]
    _, evecs = np.linalg.eigh(x @ x.T)
    # Householder QR keeps q orthonormal even for null directions
    q, _ = np.linalg.qr(x.T @ evecs[:, ::-1])
    return q


def _randomized_row_basis(
    x: np.ndarray, width: int, power_iters: int, rng: np.random.Generator
) -> np.ndarray:
    n, d = x.shape
    omega = rng.standard_normal((d, width))
    y, _ = np.linalg.qr(x @ omega)
    for _ in range(power_iters):
        z, _ = np.linalg.qr(x.T @ y)
        y, _ = np.linalg.qr(x @ z)
    q, _ = np.linalg.qr(x.T @ y)
    return q


def truncated_svd(
    x,
    k: int,
    oversample: int = 8,
    power_iters: int = 2,
    seed: int = 0,
    method: str = "auto",
) -> SvdBasis:
    """Compute the top-``k`` right singular vectors of ``x`` (rows = samples).

    ``method`` is ``"exact"`` (eigen-decomposition of the smaller Gram
    matrix), ``"randomized"`` (subspace iteration with ``k + oversample``
    probe vectors) or ``"auto"``, which picks exact when
    ``min(x.shape) <= 512``.  Either way the final singular values come from a
    Rayleigh-Ritz step, so ``sum(sigma_j**2) == ||x @ W||_F**2`` and the
    Frobenius tail is a valid bound for every row.
    """
    x = as_matrix(x, "X")
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise LinalgError(f"k={k} out of range for a {n}x{d} matrix")
    if oversample < 0:
        raise LinalgError("oversample must be non-negative")
    if method == "auto":
        method = "exact" if min(n, d) <= EXACT_SVD_MAX_DIM else "randomized"
    if method == "exact":
        q = _exact_row_basis(x)
    elif method == "randomized":
        width = min(k + oversample, min(n, d))
        q = _randomized_row_basis(x, width, power_iters, np.random.default_rng(seed))
    else:
        raise LinalgError(f"unknown SVD method {method!r}")

    s, v = _ritz(x, q)
    w = _fix_signs(v[:, :k])
    fro2 = float(np.sum(x * x))
    head = float(np.sum(s[:k] ** 2))
    tail = math.sqrt(max(fro2 - head, 0.0))
    return SvdBasis(
        k=k,
        singular_values=s[:k].copy(),
        W=w,
        tail_energy=tail,
        frobenius_norm=math.sqrt(fro2),
        n_samples=n,
        exact=method == "exact",
    )


def reconstruction_error(x, basis: SvdBasis) -> float:
    """``||X - X W W^T||_F``, i.e. the rank-k reconstruction residual."""
    x = as_matrix(x, "X")
    return float(np.linalg.norm(x - (x @ basis.W) @ basis.W.T))


def norm_preservation_bound(basis: SvdBasis, x) -> tuple[float, float]:
    """Bracket on ``||x W||``: ``(||x|| - tail_energy, ||x||)``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != basis.n_features:
        raise LinalgError(f"x has dimension {x.shape[0]}, basis expects {basis.n_features}")
    nx = float(np.linalg.norm(x))
    return nx - basis.tail_energy, nx


def expected_norm_degradation(basis: SvdBasis, d: int | None = None) -> float:
    """Tail energy scaled by ``d**-0.25`` (``d`` defaults to the sample count)."""
    if d is None:
        d = basis.n_samples
    if d < 1:
        raise LinalgError("d must be >= 1")
    return basis.tail_energy * d ** -0.25


@dataclass
class PowerIterationState:
    """Persistent left/right vectors for spectral-norm estimation.

    For a weight ``W`` of shape ``(fan_in, fan_out)``, ``v`` lives in the
    input space and ``u`` in the output space; the estimate is ``v @ W @ u``.
    """

    v: np.ndarray
    u: np.ndarray

    @classmethod
    def init(cls, shape: tuple[int, int], rng: np.random.Generator) -> "PowerIterationState":
        v = rng.standard_normal(shape[0])
        u = rng.standard_normal(shape[1])
        return cls(v / np.linalg.norm(v), u / np.linalg.norm(u))


def spectral_norm_power_iteration(
    w, state: PowerIterationState, iters: int = 1, tol: float | None = None, max_iters: int = 500
) -> float:
    """Power iterations in place; return the estimate of sigma_1.

    Runs ``iters`` iterations, then, when ``tol`` is given, continues until the
    estimate changes by at most ``tol`` relative (capped at ``max_iters`` in total).
    """
    if iters < 1:
        raise LinalgError("iters must be >= 1")
    w = np.asarray(w, dtype=np.float64)
    prev, k = None, 0
    while True:
        u = w.T @ state.v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        u /= nu
        v = w @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        state.u = u
        state.v = v / nv
        k += 1
        # after the update, v @ w @ u equals nv
        if k >= iters and (tol is None or k >= max_iters or (prev is not None and abs(nv - prev) <= tol * nv)):
            break
        prev = nv
    return float(state.v @ w @ state.u)


def pair_indices(n: int, pair_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded subset of the ``i < j`` index pairs, in lexicographic order."""
    if n < 2:
        raise LinalgError("need at least two rows for pairwise distances")
    if not 0.0 < pair_fraction <= 1.0:
        raise LinalgError("pair_fraction must be in (0, 1]")
    ii, jj = np.triu_indices(n, k=1)
    if pair_fraction < 1.0:
        m = max(1, int(round(pair_fraction * ii.size)))
        pick = np.sort(np.random.default_rng(seed).choice(ii.size, size=m, replace=False))
        ii, jj = ii[pick], jj[pick]
    return ii, jj


def pairwise_distances(x, pair_fraction: float = 1.0, seed: int = 0) -> np.ndarray:
    x = as_matrix(x, "X")
    ii, jj = pair_indices(x.shape[0], pair_fraction, seed)
    return distances_for_pairs(x, ii, jj)


# elements per difference block in distances_for_pairs (~32 MB of float64)
PAIR_BLOCK_ELEMENTS = 1 << 22


def distances_for_pairs(x: np.ndarray, ii: np.ndarray, jj: np.ndarray, chunk: int | None = None) -> np.ndarray:
    """Euclidean distances ``|x[ii] - x[jj]|``, ``chunk`` pairs at a time (sized by width if None)."""
    out = np.empty(ii.size)
    if chunk is None:
        chunk = max(1, PAIR_BLOCK_ELEMENTS // max(1, x.shape[1]))
    for s in range(0, ii.size, chunk):
        diff = x[ii[s : s + chunk]] - x[jj[s : s + chunk]]
        out[s : s + chunk] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise LinalgError("correlation needs two vectors of equal length >= 2")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise LinalgError("zero variance: correlation is undefined")
    return a, b


def pearson_correlation(a, b) -> float:
    a, b = _check_pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    r = float(da @ db / math.sqrt((da @ da) * (db @ db)))
    return min(1.0, max(-1.0, r))


def spearman_correlation(a, b) -> float:
    a, b = _check_pair(a, b)
    return pearson_correlation(stats.rankdata(a), stats.rankdata(b))
