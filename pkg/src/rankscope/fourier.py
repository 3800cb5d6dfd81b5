"""Numerical check that a k-row low-pass filter in the DFT domain bounds spatial rank by k.

The construction filters the column spectrum: X_filtered = W^-1 L W X, where
W is the unitary n-by-n DFT matrix and L keeps only the first k frequency
rows. Complex ranks are measured through the real embedding
[[Re, -Im], [Im, Re]] so the SVD engine stays real-only.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256
from .svd import RANK_REL_TOL, RankRangeError, numerical_rank
from .tensor import as_matrix


@dataclass(frozen=True)
class DftPlan:
    """Unitary DFT matrix for one transform size."""

    n: int
    w_matrix: np.ndarray  # (n, n) complex128, entries exp(-2*pi*i*j*k/n)/sqrt(n)


def dft_plan(n: int) -> DftPlan:
    if n < 1:
        raise ValueError(f"transform size must be positive, got {n}")
    j = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    return DftPlan(n=n, w_matrix=w)


def lowpass_spatial(x, k: int, plan: DftPlan | None = None) -> np.ndarray:
    """Apply W^-1 L W to the columns of x, keeping the first k frequency rows.

    The result is generally complex even for real input.
    """
    x = as_matrix(x)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise RankRangeError(f"cutoff {k} out of range [1, {n}] for {n} rows")
    if plan is None or plan.n != n:
        plan = dft_plan(n)
    w = plan.w_matrix
    spectrum = w @ x
    spectrum[k:, :] = 0.0
    return w.conj().T @ spectrum


def real_embedding(m) -> np.ndarray:
    """The rank-doubling real embedding [[Re, -Im], [Im, Re]] of a complex matrix."""
    m = np.asarray(m, dtype=np.complex128)
    re, im = m.real, m.imag
    return np.block([[re, -im], [im, re]])


def complex_numerical_rank(m, rel_tol: float = RANK_REL_TOL) -> int:
    """Numerical rank of a complex matrix: half the rank of its real embedding."""
    embedded = real_embedding(m)
    return numerical_rank(embedded, rel_tol) // 2


@dataclass(frozen=True)
class LowPassReport:
    n: int
    k: int
    numerical_rank: int
    bound_satisfied: bool


def verify_bound(n: int, trials: int, seed: int = 42, threads: int = 1) -> list[LowPassReport]:
    """For random unit-interval n-by-n matrices, check rank(lowpass(X, k)) <= k for all k.

    Returns one report per (trial, k), trial-major.
    """
    if n < 2:
        raise ValueError(f"matrix size must be >= 2, got {n}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    gen = Xoshiro256(seed)
    plan = dft_plan(n)
    mats = [gen.uniform_array((n, n)) for _ in range(trials)]

    def one_trial(x):
        reports = []
        for k in range(1, n + 1):
            rank = complex_numerical_rank(lowpass_spatial(x, k, plan))
            reports.append(
                LowPassReport(n=n, k=k, numerical_rank=rank, bound_satisfied=rank <= k)
            )
        return reports

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(one_trial, mats))
    else:
        per_trial = [one_trial(x) for x in mats]
    return [r for reports in per_trial for r in reports]


def write_reports_csv(reports: list[LowPassReport], path) -> None:
    """CSV rows `trial,k,numerical_rank,bound_satisfied` for trial-major report lists."""
    with open(path, "w", newline="") as fh:
        fh.write("trial,k,numerical_rank,bound_satisfied\n")
        for i, r in enumerate(reports):
            fh.write(f"{i // r.n},{r.k},{r.numerical_rank},{1 if r.bound_satisfied else 0}\n")
