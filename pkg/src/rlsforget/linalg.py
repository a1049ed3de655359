"""Small dense linear algebra for symmetric systems (n <= ~10).

Matrices travel as numpy arrays. The two kernels that run every estimator
step (Gauss-Jordan inversion and the cyclic Jacobi eigenvalue solver) are
explicit loops compiled with numba; at n = 6 numpy's per-call overhead
would dominate otherwise.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit

SINGULAR_EIG = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


class LinalgError(ValueError):
    pass


class SingularMatrixError(LinalgError):
    """Raised when a matrix is too close to singular to invert."""

    def __init__(self, min_eigenvalue: float, threshold: float = SINGULAR_EIG):
        self.min_eigenvalue = min_eigenvalue
        self.threshold = threshold
        super().__init__(
            f"matrix is near-singular: min eigenvalue {min_eigenvalue:.3e} "
            f"<= {threshold:.1e}"
        )


class ConvergenceError(LinalgError):
    pass


def as_vector(u: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(u, dtype=float)
    if v.ndim != 1:
        raise LinalgError(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise LinalgError("vector has non-finite entries")
    return v


def as_square(a: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LinalgError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError("matrix has non-finite entries")
    return m


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def is_symmetric(a: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= rtol * scale)


def outer(u, v) -> np.ndarray:
    """Outer product ``u v^T``; symmetric whenever ``u is v``."""
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise LinalgError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return np.outer(u, v)


def trace(a) -> float:
    return float(np.trace(as_square(a)))


@njit(cache=True)
def _jacobi_eigenvalues(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, float]:
    # a is overwritten; returns (sorted diagonal, final off-norm); off-norm < 0 on success
    n = a.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j] * a[i, j]
    if total == 0.0:
        return np.zeros(n), -1.0
    threshold = tol * math.sqrt(total)
    off_norm = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        off_norm = math.sqrt(2.0 * off)
        if off_norm < threshold:
            return np.sort(np.diag(a).copy()), -1.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r == p or r == q:
                        continue
                    arp = a[r, p]
                    arq = a[r, q]
                    nrp = c * arp - s * arq
                    nrq = s * arp + c * arq
                    a[r, p] = nrp
                    a[p, r] = nrp
                    a[r, q] = nrq
                    a[q, r] = nrq
    return np.sort(np.diag(a).copy()), off_norm


def sym_eigenvalues(
    a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS
) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``; raises ConvergenceError after ``max_sweeps``.
    """
    m = as_square(a)
    if not is_symmetric(m):
        raise LinalgError("sym_eigenvalues requires a symmetric matrix")
    eigs, off_norm = _jacobi_eigenvalues(symmetrize(m), tol, max_sweeps)
    if off_norm >= 0.0:
        raise ConvergenceError(
            f"Jacobi iteration did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {off_norm:.3e})"
        )
    return eigs


def spectral_radius(a) -> float:
    return float(np.max(np.abs(sym_eigenvalues(a)), initial=0.0))


def is_psd(a, tol: float = 0.0) -> bool:
    return bool(sym_eigenvalues(a)[0] >= -tol)


@njit(cache=True)
def _gauss_jordan_inverse(a: np.ndarray) -> tuple[np.ndarray, bool]:
    n = a.shape[0]
    aug = np.zeros((n, 2 * n))
    aug[:, :n] = a
    for i in range(n):
        aug[i, n + i] = 1.0
    for col in range(n):
        piv = col
        best = abs(aug[col, col])
        for r in range(col + 1, n):
            if abs(aug[r, col]) > best:
                best = abs(aug[r, col])
                piv = r
        if best == 0.0:
            return aug[:, n:], False
        if piv != col:
            for j in range(2 * n):
                tmp = aug[col, j]
                aug[col, j] = aug[piv, j]
                aug[piv, j] = tmp
        inv_p = 1.0 / aug[col, col]
        for j in range(2 * n):
            aug[col, j] *= inv_p
        for r in range(n):
            if r == col:
                continue
            f = aug[r, col]
            if f == 0.0:
                continue
            for j in range(col, 2 * n):
                aug[r, j] -= f * aug[col, j]
    return aug[:, n:].copy(), True


def invert(a, eigenvalues: np.ndarray | None = None) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix, symmetrized.

    Gauss-Jordan elimination with partial pivoting. ``eigenvalues`` may be
    passed when the caller already has them, to skip recomputing the
    singularity check.
    """
    m = as_square(a)
    if not is_symmetric(m):
        raise LinalgError("invert requires a symmetric matrix")
    if eigenvalues is None:
        eigenvalues = sym_eigenvalues(m)
    lam_min = float(eigenvalues[0])
    if lam_min <= SINGULAR_EIG:
        raise SingularMatrixError(lam_min)
    inv, ok = _gauss_jordan_inverse(m)
    if not ok:
        raise SingularMatrixError(lam_min)
    return symmetrize(inv)
