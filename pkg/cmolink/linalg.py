# -*- coding: utf-8 -*-
"""
Complex matrix helpers: Hermitian eigendecomposition with a reproducible
phase convention and regularized Hermitian solves. All functions accept
stacks of matrices (leading batch axes).
"""

from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, ShapeError, SingularMatrixError

__all__ = ["EigenResult", "hermitian_eig", "fix_phase", "solve_hermitian_plus_diag",
           "psd_sqrt", "HERMITIAN_TOL", "PHASE_TOL", "SINGULAR_COND"]


HERMITIAN_TOL = 1e-9
PHASE_TOL = 1e-12
SINGULAR_COND = 1e12  # condition number treated as singular


class EigenResult(NamedTuple):
    #: Eigenvalues, sorted descending along the last axis.
    eigenvalues: np.ndarray
    #: Unit-norm, phase-fixed eigenvectors as columns, paired with eigenvalues.
    eigenvectors: np.ndarray


def _check_square(a, what):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"{what} must be square, got shape {a.shape}")


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """ Rotate every column so that its first entry with magnitude above
        ``PHASE_TOL`` is real and non-negative. Idempotent. """
    vectors = np.array(vectors, dtype=np.complex128)
    significant = np.abs(vectors) > PHASE_TOL
    first = np.argmax(significant, axis=-2)
    pivot = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    magnitude = np.abs(pivot)
    rotation = np.where(magnitude > PHASE_TOL, np.conj(pivot) / np.where(magnitude > 0, magnitude, 1), 1.0)
    fixed = vectors * rotation
    # Remove the rounding residue of the pivot's imaginary part.
    pivot_fixed = np.take_along_axis(fixed, first[..., None, :], axis=-2)
    np.put_along_axis(fixed, first[..., None, :], np.abs(pivot_fixed) + 0j, axis=-2)
    return fixed


def hermitian_eig(r: np.ndarray) -> EigenResult:
    """ Eigendecomposition of a Hermitian matrix (or a stack of them).

        :param r: Array of shape ``(..., n, n)``, Hermitian within
            ``HERMITIAN_TOL`` (relative to its largest entry).
        :returns: :class:`EigenResult` with descending eigenvalues and
            phase-fixed eigenvector columns.
        :raises ShapeError: Non-square or non-Hermitian input.
        :raises ConvergenceError: The LAPACK driver did not converge.
    """
    r = np.asarray(r, dtype=np.complex128)
    _check_square(r, "Covariance matrix")
    scale = max(1.0, float(np.max(np.abs(r)))) if r.size else 1.0
    if np.max(np.abs(r - np.conj(np.swapaxes(r, -1, -2))), initial=0.0) > HERMITIAN_TOL * scale:
        raise ShapeError("Matrix is not Hermitian")
    if not np.all(np.isfinite(r)):
        raise ConvergenceError("Matrix has non-finite entries")
    try:
        values, vectors = np.linalg.eigh(r)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"Eigendecomposition did not converge: {e}") from e
    values = values[..., ::-1]
    vectors = vectors[..., ::-1]
    return EigenResult(values, fix_phase(vectors))


def solve_hermitian_plus_diag(a: np.ndarray, sigma2, b: np.ndarray) -> np.ndarray:
    """ Solve ``(a + sigma2 * I) x = b``.

        :param a: Hermitian positive semi-definite ``(..., n, n)``.
        :param sigma2: Non-negative diagonal load, scalar or one per matrix.
        :param b: Right-hand side ``(..., n, k)``.
        :raises SingularMatrixError: ``sigma2 == 0`` and ``a`` is singular.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    _check_square(a, "System matrix")
    if b.ndim != a.ndim or b.shape[-2] != a.shape[-1]:
        raise ShapeError(f"Right-hand side {b.shape} does not match system {a.shape}")
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 < 0):
        raise ShapeError("Diagonal load sigma2 must be non-negative")
    n = a.shape[-1]
    loaded = a + sigma2.reshape(sigma2.shape + (1, 1)) * np.eye(n)
    if np.any(sigma2 == 0):
        cond = np.linalg.cond(loaded)
        if np.any(~np.isfinite(cond)) or np.any(cond > SINGULAR_COND):
            raise SingularMatrixError("Singular system: sigma2 = 0 and the matrix is rank-deficient")
    try:
        return np.linalg.solve(loaded, b)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Singular system: {e}") from e


def psd_sqrt(r: np.ndarray) -> np.ndarray:
    """ Hermitian square root of a positive semi-definite matrix. """
    values, vectors = np.linalg.eigh(np.asarray(r, dtype=np.complex128))
    root = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * root[..., None, :]) @ np.conj(np.swapaxes(vectors, -1, -2))
