"""Half-vectorisation, SPD logarithms and the log-coordinate rate map.

Every function accepts stacks of matrices with shape ``(..., n, n)``.
Eigen-decompositions use ``numpy.linalg.eigh``.
"""

import functools
import math
from dataclasses import dataclass
from typing import Any, Tuple

import numpy as np

from packages.core.errors import MatrixError

SYMMETRY_TOL = 1e-10
SPD_FLOOR = 1e-12
TIE_TOL = 1e-9


@dataclass(frozen=True)
class EigDecomposition:
    """Gamma = vectors @ diag(values) @ vectors.T with ascending values."""

    vectors: np.ndarray
    values: np.ndarray


@functools.lru_cache(maxsize=None)
def _lower_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    # Column-major traversal of the lower triangle.
    cols, rows = np.triu_indices(n)
    return rows, cols


def _square(X: Any) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise MatrixError(f"Expected square matrices, got shape {X.shape}")
    return X


def _require_symmetric(X: np.ndarray) -> None:
    scale = np.maximum(1.0, np.max(np.abs(X), axis=(-2, -1), initial=0.0))
    gap = np.max(np.abs(X - np.swapaxes(X, -1, -2)), axis=(-2, -1), initial=0.0)
    if np.any(gap > SYMMETRY_TOL * scale):
        raise MatrixError("Matrix is not symmetric", {"max_asymmetry": float(np.max(gap))})


def symmetrize(X: Any) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def vech_dim(n: int) -> int:
    return n * (n + 1) // 2


def vech_order(vech_length: int) -> int:
    """Recover n from n(n+1)/2."""
    n = (math.isqrt(8 * vech_length + 1) - 1) // 2
    if vech_dim(n) != vech_length or vech_length < 1:
        raise MatrixError(f"{vech_length} is not a triangular number")
    return n


def vech(X: Any) -> np.ndarray:
    """Stack the lower triangle of a symmetric matrix column by column."""
    X = _square(X)
    _require_symmetric(X)
    rows, cols = _lower_indices(X.shape[-1])
    return X[..., rows, cols]


def unvech(v: Any) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = vech_order(v.shape[-1])
    rows, cols = _lower_indices(n)
    X = np.zeros(v.shape[:-1] + (n, n))
    X[..., rows, cols] = v
    X[..., cols, rows] = v
    return X


def vec(X: Any) -> np.ndarray:
    """Column-major vectorisation."""
    X = np.asarray(X, dtype=float)
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (-1,))


def duplication_matrix(n: int) -> np.ndarray:
    """D_n with vec(X) = D_n vech(X) for symmetric X."""
    rows, cols = _lower_indices(n)
    D = np.zeros((n * n, vech_dim(n)))
    for p, (i, j) in enumerate(zip(rows, cols)):
        D[j * n + i, p] = 1.0
        D[i * n + j, p] = 1.0
    return D


def elimination_matrix(n: int) -> np.ndarray:
    """L_n with vech(X) = L_n vec(X)."""
    rows, cols = _lower_indices(n)
    L = np.zeros((vech_dim(n), n * n))
    for p, (i, j) in enumerate(zip(rows, cols)):
        L[p, j * n + i] = 1.0
    return L


def eig_decomposition(Gamma: Any) -> EigDecomposition:
    Gamma = _square(Gamma)
    _require_symmetric(Gamma)
    values, vectors = np.linalg.eigh(symmetrize(Gamma))
    return EigDecomposition(vectors=vectors, values=values)


def _recompose(vectors: np.ndarray, values: np.ndarray) -> np.ndarray:
    return symmetrize((vectors * values[..., None, :]) @ np.swapaxes(vectors, -1, -2))


def log_spd(Gamma: Any) -> np.ndarray:
    """Principal logarithm of an SPD matrix."""
    eig = eig_decomposition(Gamma)
    if np.any(eig.values <= SPD_FLOOR):
        raise MatrixError("Matrix is not positive definite",
                          {"min_eigenvalue": float(np.min(eig.values))})
    return _recompose(eig.vectors, np.log(eig.values))


def exp_sym(S: Any) -> np.ndarray:
    """Matrix exponential of a symmetric matrix; the result is SPD."""
    eig = eig_decomposition(S)
    return _recompose(eig.vectors, np.exp(eig.values))


def dalecki_krein_C(eig: EigDecomposition) -> np.ndarray:
    """
    Divided differences of the logarithm at the eigenvalues.

    C_ij = (ln l_i - ln l_j) / (l_i - l_j), replaced by 1 / max(l_i, l_j)
    when the two eigenvalues agree to within a relative 1e-9.
    """
    lam = np.asarray(eig.values, dtype=float)
    if np.any(lam <= SPD_FLOOR):
        raise MatrixError("Eigenvalues must be positive",
                          {"min_eigenvalue": float(np.min(lam))})
    li = lam[..., :, None]
    lj = lam[..., None, :]
    largest = np.maximum(li, lj)
    gap = np.abs(li - lj)
    tie = gap <= TIE_TOL * largest
    safe = np.where(tie, 1.0, gap)
    with np.errstate(divide="ignore", invalid="ignore"):
        divided = np.log1p(safe / np.minimum(li, lj)) / safe
    return np.where(tie, 1.0 / largest, divided)


def log_coordinate_rate(Gamma: Any, Gamma_dot: Any) -> np.ndarray:
    """
    Map dGamma/dt to d vech(ln Gamma)/dt.

    Args:
        Gamma: SPD matrix (or stack)
        Gamma_dot: Symmetric rate of the same shape

    Returns:
        vech of Sigma (C * Sigma^T Gamma_dot Sigma) Sigma^T
    """
    Gamma_dot = _square(Gamma_dot)
    _require_symmetric(Gamma_dot)
    eig = eig_decomposition(Gamma)
    C = dalecki_krein_C(eig)
    Sigma = eig.vectors
    SigmaT = np.swapaxes(Sigma, -1, -2)
    rate = symmetrize(Sigma @ (C * (SigmaT @ Gamma_dot @ Sigma)) @ SigmaT)
    rows, cols = _lower_indices(rate.shape[-1])
    return rate[..., rows, cols]
