"""Singular value decomposition and rank-k matrix/image reconstruction.

The decomposition is a one-sided Jacobi iteration: Givens rotations
repeatedly orthogonalize column pairs of A^T until every off-diagonal Gram
entry g_ij satisfies |g_ij| <= tol * sqrt(g_ii * g_jj). Chosen over
bidiagonalization approaches because it is short enough to audit and
forward-stable at the matrix sizes this package handles (<= 512).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .rng import Xoshiro256
from .tensor import ImageTensor, as_matrix, clamp_array

JACOBI_TOL = 1e-12
MAX_SWEEPS = 60

#: relative cutoff defining the numerical rank: count of sigma_i > tol * sigma_1
RANK_REL_TOL = 1e-6


class ConvergenceError(RuntimeError):
    """Jacobi sweeps exhausted before reaching the off-diagonal tolerance."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"one-sided Jacobi failed to converge after {sweeps} sweeps "
            f"(worst off-diagonal ratio {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class RankRangeError(ValueError):
    """Requested truncation rank is outside [0, min(rows, cols)]."""


class SvdFactors(NamedTuple):
    u: np.ndarray  # (w, w) orthonormal
    sigma: np.ndarray  # (w,) non-negative, descending
    v: np.ndarray  # (h, w) orthonormal columns


@njit(cache=True, nogil=True)
def _jacobi_sweeps(b, rot, tol, max_sweeps):  # pragma: no cover - compiled
    """Rotate column pairs of b (h, w) in place; rot accumulates rotations.

    Returns (sweeps_used, worst_residual, converged). A sweep that applies
    no rotation certifies every pair is within tolerance.
    """
    h, w = b.shape
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(w - 1):
            for j in range(i + 1, w):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for t in range(h):
                    alpha += b[t, i] * b[t, i]
                    beta += b[t, j] * b[t, j]
                    gamma += b[t, i] * b[t, j]
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                tan = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cos = 1.0 / np.sqrt(1.0 + tan * tan)
                sin = cos * tan
                for t in range(h):
                    bi = b[t, i]
                    bj = b[t, j]
                    b[t, i] = cos * bi - sin * bj
                    b[t, j] = sin * bi + cos * bj
                for t in range(w):
                    ri = rot[t, i]
                    rj = rot[t, j]
                    rot[t, i] = cos * ri - sin * rj
                    rot[t, j] = sin * ri + cos * rj
        if not rotated:
            return sweep + 1, 0.0, True
    worst = 0.0
    for i in range(w - 1):
        for j in range(i + 1, w):
            alpha = 0.0
            beta = 0.0
            gamma = 0.0
            for t in range(h):
                alpha += b[t, i] * b[t, i]
                beta += b[t, j] * b[t, j]
                gamma += b[t, i] * b[t, j]
            if alpha > 0.0 and beta > 0.0:
                ratio = abs(gamma) / np.sqrt(alpha * beta)
                if ratio > worst:
                    worst = ratio
    return max_sweeps, worst, False


def _fill_orthonormal(cols: np.ndarray, deficient: np.ndarray) -> None:
    """Replace near-zero columns with canonical directions orthogonal to the rest."""
    h = cols.shape[0]
    for idx in np.nonzero(deficient)[0]:
        for t in range(h):
            cand = np.zeros(h)
            cand[t] = 1.0
            cand -= cols @ (cols.T @ cand)
            norm = np.linalg.norm(cand)
            if norm > 0.5:
                cols[:, idx] = cand / norm
                break


def svd(a, max_sweeps: int = MAX_SWEEPS) -> SvdFactors:
    """Thin SVD of a w-by-h matrix with w <= h: a = u @ diag(sigma) @ v.T.

    Raises ConvergenceError (carrying the final off-diagonal residual) if
    the sweep budget is exhausted, and ShapeMismatchError for w > h.
    """
    a = as_matrix(a)
    w, h = a.shape
    if w > h:
        from .tensor import ShapeMismatchError

        raise ShapeMismatchError(f"svd requires rows <= cols, got {w}x{h}; transpose first")
    b = np.ascontiguousarray(a.T, dtype=np.float64).copy()
    rot = np.eye(w)
    sweeps, residual, converged = _jacobi_sweeps(b, rot, JACOBI_TOL, max_sweeps)
    if not converged:
        raise ConvergenceError(residual, sweeps)
    sigma = np.sqrt(np.einsum("ij,ij->j", b, b))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = rot[:, order]
    vcols = b[:, order]
    top = sigma[0] if sigma.size else 0.0
    deficient = sigma <= top * 1e-13
    safe = np.where(deficient, 1.0, sigma)
    vcols = vcols / safe[None, :]
    vcols[:, deficient] = 0.0
    if deficient.any():
        _fill_orthonormal(vcols, deficient)
    return SvdFactors(u=u, sigma=sigma, v=vcols)


def _factor_for_truncation(a: np.ndarray):
    """SVD of `a` in whichever orientation satisfies rows <= cols."""
    transposed = a.shape[0] > a.shape[1]
    f = svd(a.T if transposed else a)
    return f, transposed


def reconstruct(f: SvdFactors, k: int, reverse: bool = False) -> np.ndarray:
    """Sum of singular triplets j = 1..k (or j = k+1..w when reverse)."""
    keep = slice(k, None) if reverse else slice(None, k)
    return (f.u[:, keep] * f.sigma[keep]) @ f.v[:, keep].T


def _check_rank(a: np.ndarray, k: int) -> None:
    limit = min(a.shape)
    if not 0 <= k <= limit:
        raise RankRangeError(f"rank {k} out of range [0, {limit}] for shape {a.shape}")


def truncate_rank(a, k: int) -> np.ndarray:
    """Best rank-k approximation: the k largest singular triplets."""
    a = as_matrix(a)
    _check_rank(a, k)
    f, transposed = _factor_for_truncation(a)
    out = reconstruct(f, k)
    return out.T if transposed else out


def truncate_reverse(a, k: int) -> np.ndarray:
    """Residual after removing the k largest singular triplets."""
    a = as_matrix(a)
    _check_rank(a, k)
    f, transposed = _factor_for_truncation(a)
    out = reconstruct(f, k, reverse=True)
    return out.T if transposed else out


def singular_values(a) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] > a.shape[1]:
        a = a.T
    return svd(a).sigma


def numerical_rank(a, rel_tol: float = RANK_REL_TOL) -> int:
    """Count of singular values above rel_tol * sigma_1."""
    sigma = singular_values(a)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0]))


def image_factors(x: ImageTensor) -> list[SvdFactors]:
    """Per-channel SVD factors of an image, computed once for reuse."""
    return [svd(x.channel(c)) for c in range(x.channels)]


def image_rank_k(x: ImageTensor, k: int, reverse: bool = False) -> ImageTensor:
    """Per-channel rank-k (or top-k-removed) reconstruction, clipped to [0, 1]."""
    if not 0 <= k <= x.w:
        raise RankRangeError(f"rank {k} out of range [0, {x.w}] for image {x.shape}")
    out = np.empty_like(x.data)
    for c, f in enumerate(image_factors(x)):
        out[c] = reconstruct(f, k, reverse=reverse)
    return ImageTensor(clamp_array(out), x.transposed_on_load)


@dataclass(frozen=True)
class TruncationTiming:
    rank: int
    seconds: float
    shape: tuple[int, int, int]  # (w, h, c)


def benchmark_truncation(w: int, h: int, c: int, trials: int, seed: int = 42) -> list[TruncationTiming]:
    """Mean wall time of image_rank_k per rank k = 0..w over `trials` random images.

    A warm-up call runs first so JIT compilation never lands in a timing.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    gen = Xoshiro256(seed)
    images = [
        ImageTensor(gen.uniform_array((c, w, h))) for _ in range(trials)
    ]
    image_rank_k(images[0], min(1, w))  # warm-up
    totals = np.zeros(w + 1)
    for img in images:
        for k in range(w + 1):
            start = time.perf_counter()
            image_rank_k(img, k)
            totals[k] += time.perf_counter() - start
    return [
        TruncationTiming(rank=k, seconds=float(totals[k] / trials), shape=(w, h, c))
        for k in range(w + 1)
    ]


def write_timings_csv(timings: list[TruncationTiming], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("rank,mean_seconds\n")
        for t in timings:
            fh.write(f"{t.rank},{t.seconds!r}\n")
