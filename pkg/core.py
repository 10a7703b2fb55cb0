#!/usr/bin/env python3
"""
Block-structured linear algebra
Mixed ℓ2/ℓp vector norms, the ρ_r/ρ_c mixed matrix norms, orthogonal projections,
least squares and extremal singular values
"""

import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from dotenv import load_dotenv

from exceptions import FormatError, RankError, StructureError

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
RANK_TOL = float(os.getenv('HIBLK_RANK_TOL', '1e-10'))


@dataclass(frozen=True)
class BlockPartition:
    """q×d partition of a matrix into row blocks of height q and column blocks of width d"""
    row_block: int
    col_block: int

    def __post_init__(self):
        if self.row_block < 1 or self.col_block < 1:
            raise StructureError(f"block sizes must be positive, got ({self.row_block}, {self.col_block})")


def _norm_order(p):
    if p in (1, 2):
        return p
    if p in (np.inf, math.inf, 'inf', '∞'):
        return np.inf
    raise ValueError(f"p must be 1, 2 or inf, got {p!r}")


def block_norms(x, d):
    """Per-block ℓ2 norms of a vector split into consecutive length-d blocks"""
    x = np.asarray(x)
    if x.ndim != 1 or d < 1 or x.shape[0] % d:
        raise StructureError(f"vector of length {x.shape[0]} cannot be split into blocks of {d}")
    return np.linalg.norm(x.reshape(-1, d), axis=1)


def mixed_norm(x, d, p):
    """ℓp norm of the vector of per-block ℓ2 norms"""
    norms = block_norms(x, d)
    if norms.size == 0:
        return 0.0
    return float(np.linalg.norm(norms, ord=_norm_order(p)))


def pad_to_partition(D, part):
    """Zero-pad rows and columns up to multiples of the partition"""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.size == 0:
        raise StructureError(f"expected a non-empty matrix, got shape {D.shape}")
    rows = -D.shape[0] % part.row_block
    cols = -D.shape[1] % part.col_block
    if rows or cols:
        D = np.pad(D, ((0, rows), (0, cols)))
    return D


def block_spectral_norms(D, part):
    """Matrix of ‖D_[i,j]‖_2 over the (zero-padded) q×d block grid"""
    D = pad_to_partition(D, part)
    q, d = part.row_block, part.col_block
    blocks = D.reshape(D.shape[0] // q, q, D.shape[1] // d, d).transpose(0, 2, 1, 3)
    return np.linalg.norm(blocks, ord=2, axis=(2, 3))


def rho_r(D, part):
    """max_i Σ_j ‖D_[i,j]‖_2"""
    return float(block_spectral_norms(D, part).sum(axis=1).max())


def rho_c(D, part):
    """max_j Σ_i ‖D_[i,j]‖_2"""
    return float(block_spectral_norms(D, part).sum(axis=0).max())


def _group_norms(D, row_groups, col_groups):
    D = np.asarray(D, dtype=float)
    if not row_groups or not col_groups:
        return np.zeros((len(row_groups), len(col_groups)))
    norms = np.zeros((len(row_groups), len(col_groups)))
    for i, rows in enumerate(row_groups):
        for j, cols in enumerate(col_groups):
            block = D[np.ix_(np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))]
            norms[i, j] = np.linalg.norm(block, ord=2) if block.size else 0.0
    return norms


def rho_c_groups(D, row_groups, col_groups):
    """ρ_c over explicit (possibly non-contiguous) row and column index groups; 0 when either side is empty"""
    norms = _group_norms(D, row_groups, col_groups)
    return float(norms.sum(axis=0).max()) if norms.size else 0.0


def rho_r_groups(D, row_groups, col_groups):
    norms = _group_norms(D, row_groups, col_groups)
    return float(norms.sum(axis=1).max()) if norms.size else 0.0


def _check_finite(D):
    D = np.asarray(D, dtype=float)
    if not np.all(np.isfinite(D)):
        raise FormatError("matrix has non-finite entries")
    return D


def spectral_norm(D):
    D = _check_finite(D)
    if D.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(D)[0])


def min_singular(G):
    """Smallest eigenvalue of a symmetric Gram matrix, i.e. σ_min(AᴴA)"""
    G = _check_finite(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise StructureError(f"expected a square matrix, got shape {G.shape}")
    if G.size == 0:
        return 0.0
    return float(scipy.linalg.eigvalsh((G + G.T) / 2.0)[0])


def condition_ratio(A):
    """σ_min/σ_max of a tall matrix (0 for an all-zero matrix)"""
    values = scipy.linalg.svdvals(A)
    return float(values[-1] / values[0]) if values[0] > 0 else 0.0


def _orthonormal_basis(basis, rank_tol):
    basis = _check_finite(basis)
    if basis.ndim != 2:
        raise StructureError(f"basis must be 2-D, got shape {basis.shape}")
    if basis.shape[1] > basis.shape[0]:
        raise RankError(f"{basis.shape[1]} columns cannot be independent in dimension {basis.shape[0]}", 0.0)
    Q, R = scipy.linalg.qr(basis, mode='economic')
    ratio = condition_ratio(R)
    if ratio <= rank_tol:
        raise RankError(f"basis is rank deficient (σ_min/σ_max = {ratio:.3e})", ratio)
    return Q, R


class ComplementProjector:
    """P⊥ onto the orthogonal complement of range(basis), applied lazily"""

    def __init__(self, basis, rank_tol=None):
        basis = np.asarray(basis, dtype=float)
        self.dim = basis.shape[0]
        self.rank = basis.shape[1] if basis.ndim == 2 else 0
        if self.rank == 0:
            self.Q = None
        else:
            self.Q, _ = _orthonormal_basis(basis, RANK_TOL if rank_tol is None else rank_tol)

    def __repr__(self):
        return f'<ComplementProjector dim={self.dim} rank={self.rank}>'

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.Q is None:
            return v.copy()
        return v - self.Q @ (self.Q.T @ v)


def proj_complement(basis, rank_tol=None):
    """
    Projector onto the complement of range(basis)

    Args:
        basis (ndarray): M×s matrix, possibly with s = 0
        rank_tol (float): σ_min/σ_max threshold, HIBLK_RANK_TOL by default

    Returns:
        ComplementProjector: callable v ↦ v − basis·(basis† v), also accepts matrices
    """
    return ComplementProjector(basis, rank_tol)


def ls_solve(D_S, y, rank_tol=None):
    """Least-squares coefficients of y on the columns of D_S via economic QR"""
    D_S = np.asarray(D_S, dtype=float)
    y = np.asarray(y, dtype=float)
    if D_S.ndim != 2 or D_S.shape[1] == 0:
        return np.zeros(0)
    Q, R = _orthonormal_basis(D_S, RANK_TOL if rank_tol is None else rank_tol)
    return scipy.linalg.solve_triangular(R, Q.T @ y)


def pinv(A, rank_tol=None):
    """Moore-Penrose inverse of a full-column-rank matrix, (AᴴA)⁻¹Aᴴ via QR"""
    A = np.asarray(A, dtype=float)
    if A.shape[1] == 0:
        return np.zeros((0, A.shape[0]))
    Q, R = _orthonormal_basis(A, RANK_TOL if rank_tol is None else rank_tol)
    return scipy.linalg.solve_triangular(R, Q.T)


def operator_norm_probe(D, part, p, samples=256, rng_seed=0):
    """
    Randomized lower bound on the mixed operator norm ‖D‖_{(q,d)2,p}

    The norm is a max over all x of ‖Dx‖_{(q)2,p}/‖x‖_{(d)2,p}; this evaluates the ratio on
    Gaussian vectors and on every single-block vector and returns the largest value seen.
    """
    order = _norm_order(p)
    D = pad_to_partition(D, part)
    rng = np.random.default_rng(rng_seed)
    d = part.col_block
    candidates = [rng.standard_normal(D.shape[1]) for _ in range(samples)]
    for j in range(D.shape[1] // d):
        x = np.zeros(D.shape[1])
        x[j * d:(j + 1) * d] = rng.standard_normal(d)
        candidates.append(x)
        # Right singular vector of the block column
        _, _, vt = np.linalg.svd(D[:, j * d:(j + 1) * d], full_matrices=False)
        x = np.zeros(D.shape[1])
        x[j * d:(j + 1) * d] = vt[0]
        candidates.append(x)

    best = 0.0
    for x in candidates:
        denominator = mixed_norm(x, d, order)
        if denominator > 0:
            best = max(best, mixed_norm(D @ x, part.row_block, order) / denominator)
    return best
