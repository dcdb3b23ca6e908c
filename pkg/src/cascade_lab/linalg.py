"""Small dense symmetric linear algebra kernels.

Dimensions here are desk scale (d up to a few hundred), so a cyclic Jacobi
eigensolver and an unblocked Cholesky are fast enough and keep the numerics
self-contained and easy to audit.
"""

from __future__ import annotations

import numpy as np

JACOBI_TOL = 1e-12


class FactorizationError(ValueError):
    """Raised when a matrix is numerically singular / not positive definite."""


def off_diagonal_norm(a: np.ndarray) -> float:
    """Frobenius norm of the strictly off-diagonal part."""
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns). Convergence is
    declared when the off-diagonal Frobenius norm drops below ``tol`` times
    the matrix scale.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10, rtol=1e-10):
        raise ValueError("matrix is not symmetric")
    d = a.shape[0]
    work = 0.5 * (a + a.T)
    vecs = np.eye(d)
    if d == 1:
        return work.diagonal().copy(), vecs

    scale = max(float(np.max(np.abs(work))), 1.0)
    threshold = tol * scale
    for _ in range(max_sweeps):
        if off_diagonal_norm(work) <= threshold:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = work[p, q]
                if abs(apq) <= 1e-300:
                    continue
                app, aqq = work[p, p], work[q, q]
                # Rotation angle from the standard stable formulation.
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = work[p, :].copy()
                rq = work[q, :].copy()
                work[p, :] = c * rp - s * rq
                work[q, :] = s * rp + c * rq
                cp = work[:, p].copy()
                cq = work[:, q].copy()
                work[:, p] = c * cp - s * cq
                work[:, q] = s * cp + c * cq
                work[p, q] = 0.0
                work[q, p] = 0.0
                vp = vecs[:, p].copy()
                vq = vecs[:, q].copy()
                vecs[:, p] = c * vp - s * vq
                vecs[:, q] = s * vp + c * vq

    vals = work.diagonal().copy()
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


JACOBI_DIM_LIMIT = 8


def sym_eigh(a: np.ndarray):
    """Symmetric eigendecomposition: cyclic Jacobi up to dimension 8, LAPACK
    beyond that.  The Jacobi path stays the reference implementation (it is
    cross-checked against LAPACK in tests); per-round solves at larger
    dimensions are too hot for a pure-Python sweep loop.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[0] <= JACOBI_DIM_LIMIT:
        return jacobi_eigh(a)
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return vals, vecs


def eigvalsh(a: np.ndarray) -> np.ndarray:
    """Eigenvalues (ascending) of a symmetric matrix."""
    vals, _ = sym_eigh(a)
    return vals


def min_eigenvalue(a: np.ndarray) -> float:
    return float(eigvalsh(a)[0])


def cholesky_lower(a: np.ndarray, tol_pd: float = 1e-12) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises FactorizationError when a pivot falls below ``tol_pd`` times the
    matrix scale, which is how numerically singular inputs surface.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    scale = max(float(np.max(np.abs(a))), 1.0) if a.size else 1.0
    lower = np.zeros_like(a)
    for j in range(d):
        s = a[j, j] - np.dot(lower[j, :j], lower[j, :j])
        if s <= tol_pd * scale:
            raise FactorizationError(f"pivot {j} not positive (got {s:.3e})")
        lower[j, j] = np.sqrt(s)
        if j + 1 < d:
            lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def solve_lower(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward-substitution solve of L x = b (b may be a vector or matrix)."""
    d = lower.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(d):
        x[i] = (x[i] - lower[i, :i] @ x[:i]) / lower[i, i]
    return x


def solve_upper(upper: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Back-substitution solve of U x = b for upper-triangular U."""
    d = upper.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(d - 1, -1, -1):
        x[i] = (x[i] - upper[i, i + 1:] @ x[i + 1:]) / upper[i, i]
    return x


def whitened_by(v: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """L^-1 V L^-T for lower-triangular L, symmetrized against drift."""
    w = solve_lower(lower, solve_lower(lower, np.asarray(v, dtype=float)).T)
    return 0.5 * (w + w.T)
