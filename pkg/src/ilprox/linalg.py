"""Minimal dense linear algebra used by every other module.

Everything operates on float64 numpy arrays: matrices are 2-d row-major
arrays, vectors are 1-d arrays.  The helpers here add the contract checks
(shape, finiteness) that the rest of the library relies on, on top of the
numpy/LAPACK routines that do the actual work.
"""

from __future__ import annotations

import numpy as np

# Relative singular-value cutoff for pseudo-inverses.  SVD is used instead
# of the Gram-inverse formula because the verification suites deliberately
# probe rank-deficient matrices.
SVD_CUTOFF = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def matvec(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with an explicit shape check."""
    w = as_matrix(w)
    v = as_vector(v)
    if w.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: {w.shape} x {v.shape}")
    return w @ v


def pinv(m: np.ndarray, cutoff: float = SVD_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD with a relative cutoff."""
    return np.linalg.pinv(as_matrix(m), rcond=cutoff)


def pinv_left(m: np.ndarray, cutoff: float = SVD_CUTOFF) -> np.ndarray:
    """Left pseudo-inverse of a tall (or square) matrix.

    For full-column-rank input the result satisfies ``pinv_left(M) @ M = I``.
    Rank-deficient input is handled by the singular-value cutoff rather
    than raised.
    """
    m = as_matrix(m)
    if m.shape[0] < m.shape[1]:
        raise DimensionError(
            f"pinv_left expects rows >= cols, got shape {m.shape}"
        )
    return pinv(m, cutoff)


def ridge_solve(w: np.ndarray, lam: float, v: np.ndarray) -> np.ndarray:
    """Solve the ridge system ``(W^T W + lam I) u = W^T v``.

    With lam = 0 this is the least-squares solution and requires full
    column rank; a singular system raises ``np.linalg.LinAlgError``.
    """
    w = as_matrix(w)
    v = as_vector(v)
    if w.shape[0] != v.shape[0]:
        raise DimensionError(f"ridge_solve: {w.shape} vs {v.shape}")
    if lam < 0:
        raise ValueError("ridge_solve: lam must be >= 0")
    gram = w.T @ w + lam * np.eye(w.shape[1])
    rhs = w.T @ v
    if lam == 0.0:
        # reject rank-deficient systems instead of silently regularizing
        if np.linalg.matrix_rank(w, tol=SVD_CUTOFF * max(1.0, _spectral(w))) < w.shape[1]:
            raise np.linalg.LinAlgError("ridge_solve: rank-deficient W at lam=0")
    return np.linalg.solve(gram, rhs)


def _spectral(w: np.ndarray) -> float:
    return float(np.linalg.norm(w, 2))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|); raises on a zero vector (callers must filter)."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_similarity undefined for zero vectors")
    c = float(a @ b / (na * nb))
    return min(1.0, max(-1.0, c))


def frobenius_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(m, dtype=np.float64)))
