"""Input validation helpers for matrices, vectors, and covariance data.

All converters return fresh float64 numpy arrays so callers can treat the
validated data as immutable. Checks raise :class:`ConfigurationError` with a
message naming the offending argument.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

#: Eigenvalues of a "positive semidefinite" matrix may dip this far below zero
#: before we reject the matrix (floating-point slack).
PSD_TOLERANCE = 1e-10


def as_matrix(value, name: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce ``value`` to a 2-D float array, optionally enforcing a shape."""
    mat = np.asarray(value, dtype=float)
    if mat.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got ndim={mat.ndim}")
    if not np.all(np.isfinite(mat)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    if shape is not None and mat.shape != shape:
        raise ConfigurationError(f"{name} must have shape {shape}, got {mat.shape}")
    return mat.copy()


def as_vector(value, name: str, size: int | None = None) -> np.ndarray:
    """Coerce ``value`` to a 1-D float array, optionally enforcing a length."""
    vec = np.atleast_1d(np.asarray(value, dtype=float))
    if vec.ndim != 1:
        raise ConfigurationError(f"{name} must be a vector, got ndim={vec.ndim}")
    if not np.all(np.isfinite(vec)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    if size is not None and vec.size != size:
        raise ConfigurationError(f"{name} must have length {size}, got {vec.size}")
    return vec.copy()


def check_square(mat: np.ndarray, name: str) -> np.ndarray:
    if mat.shape[0] != mat.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {mat.shape}")
    return mat


def check_symmetric(mat: np.ndarray, name: str, tol: float = 1e-9) -> np.ndarray:
    check_square(mat, name)
    if not np.allclose(mat, mat.T, atol=tol, rtol=0.0):
        raise ConfigurationError(f"{name} must be symmetric")
    return mat


def check_psd(mat: np.ndarray, name: str, tol: float = PSD_TOLERANCE) -> np.ndarray:
    """Check symmetric positive semidefiniteness (eigenvalues >= -tol)."""
    check_symmetric(mat, name)
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if eigs.min(initial=0.0) < -tol:
        raise ConfigurationError(
            f"{name} must be positive semidefinite; min eigenvalue {eigs.min():.3e}"
        )
    return mat


def check_positive_definite(mat: np.ndarray, name: str) -> np.ndarray:
    check_symmetric(mat, name)
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if eigs.min() <= 0.0:
        raise ConfigurationError(
            f"{name} must be positive definite; min eigenvalue {eigs.min():.3e}"
        )
    return mat


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Kill floating-point asymmetry: (M + M^T) / 2."""
    return 0.5 * (mat + mat.T)


def spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def psd_cholesky(mat: np.ndarray, name: str = "matrix", pivot_tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L @ L.T == mat for symmetric PSD ``mat``.

    Unlike a textbook Cholesky this tolerates semidefinite input: pivots whose
    magnitude falls below ``pivot_tol`` (relative to the largest diagonal
    entry) are treated as exactly zero, so rank-deficient covariances such as
    the all-zero matrix factor cleanly. Clearly indefinite input is rejected.
    """
    m = as_matrix(mat, name)
    check_symmetric(m, name)
    n = m.shape[0]
    scale = max(np.max(np.abs(np.diag(m))), 1.0)
    lower = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot < -pivot_tol * scale:
            raise ConfigurationError(f"{name} is not positive semidefinite")
        if pivot <= pivot_tol * scale:
            # Semidefinite direction: zero column, nothing propagates.
            continue
        lower[j, j] = np.sqrt(pivot)
        for i in range(j + 1, n):
            lower[i, j] = (m[i, j] - lower[i, :j] @ lower[j, :j]) / lower[j, j]
    return lower
