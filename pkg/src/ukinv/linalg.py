"""Dense and low-rank matrix primitives used by every inversion engine.

All routines are pure functions of their inputs. Singular and eigen vectors
are returned in a canonical orientation: the largest-magnitude entry of each
vector is positive.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack, solve_triangular

from .errors import DecompositionError, DimensionError, InputError, NumericError

EIG_CLAMP = 1e-12
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class TsvdFactors:
    """Rank-r factorization ``left @ diag(singular_values) @ right.T``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    @property
    def rank(self):
        return self.singular_values.shape[0]

    def reconstruct(self):
        return (self.left * self.singular_values) @ self.right.T


@dataclass(frozen=True)
class SymEig:
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray

    def reconstruct(self):
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def _as_matrix(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] == 0 or A.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} has non-finite entries")
    return A


def canonical_signs(vectors):
    """Flip columns so the largest-magnitude entry of each is positive.

    Returns the sign vector that was applied.
    """
    if vectors.shape[1] == 0:
        return np.ones(0)
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def tsvd(A, r):
    """The ``r`` dominant singular triplets of ``A``.

    Computed by a thin SVD followed by truncation; the matrices passed here
    are tall and thin (at most a few times the retained rank in width).
    """
    A = _as_matrix(A, "A")
    r = int(r)
    if not 1 <= r <= min(A.shape):
        raise DimensionError(f"rank {r} outside [1, {min(A.shape)}] for shape {A.shape}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, s, V = U[:, :r], s[:r], Vt[:r].T
    signs = canonical_signs(U)
    return TsvdFactors(U * signs, s.copy(), V * signs)


def sym_eig_psd(S, tol=SYMMETRY_TOL):
    """Eigendecomposition of a symmetric PSD matrix, eigenvalues descending.

    Eigenvalues below ``EIG_CLAMP`` (relative to max(1, largest)) are set to 0.
    """
    S = _as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"S must be square, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > tol * scale:
        raise InputError("S is not symmetric within tolerance")
    w, P = np.linalg.eigh(0.5 * (S + S.T))
    # stable on ties, so e.g. the identity keeps its natural basis
    order = np.argsort(-w, kind="stable")
    w, P = w[order], P[:, order]
    w[w < EIG_CLAMP * max(1.0, w[0])] = 0.0
    P = P * canonical_signs(P)
    return SymEig(P, w)


def chol_sqrt(C, rel_tol=1e-14):
    """Lower Cholesky factor L with L @ L.T == C.

    A pivot whose square falls below ``rel_tol * max|C|`` counts as a failure;
    the raised :class:`DecompositionError` carries its zero-based index.
    """
    C = _as_matrix(C, "C")
    if C.shape[0] != C.shape[1]:
        raise DimensionError(f"C must be square, got {C.shape}")
    L, info = lapack.dpotrf(C, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1)
    if info < 0:
        raise NumericError(f"dpotrf rejected argument {-info}")
    diag = np.diag(L)
    bad = np.flatnonzero(diag**2 <= rel_tol * np.max(np.abs(C)))
    if bad.size:
        raise DecompositionError(f"matrix is numerically singular (pivot {bad[0]})", pivot=int(bad[0]))
    return L


def psd_sqrt(C):
    """Symmetric-PSD square root factor via clamped eigendecomposition.

    Used when Cholesky breaks down on a nearly singular covariance.
    """
    eig = sym_eig_psd(0.5 * (C + C.T), tol=np.inf)
    return eig.eigenvectors * np.sqrt(eig.eigenvalues)


class SpdSolver:
    """Reusable solves against a fixed SPD matrix (e.g. an observation noise covariance)."""

    def __init__(self, sigma):
        sigma = _as_matrix(sigma, "sigma")
        if sigma.shape[0] != sigma.shape[1]:
            raise DimensionError(f"covariance must be square, got {sigma.shape}")
        self.n = sigma.shape[0]
        off = sigma - np.diag(np.diag(sigma))
        self._diag = None
        if not np.any(off):
            d = np.diag(sigma).copy()
            if np.any(d <= 0):
                raise DecompositionError("diagonal covariance has non-positive entries",
                                         pivot=int(np.flatnonzero(d <= 0)[0]))
            self._diag = d
        else:
            self._lower = chol_sqrt(sigma)
            self._cho = (self._lower, True)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._diag is not None:
            return b / (self._diag if b.ndim == 1 else self._diag[:, None])
        return cho_solve(self._cho, b)

    def sqrt(self):
        """Lower factor L with L @ L.T equal to the matrix."""
        if self._diag is not None:
            return np.diag(np.sqrt(self._diag))
        return self._lower

    def whiten(self, b):
        """L^{-1} b, so that ``|whiten(b)|^2 == b^T sigma^{-1} b``."""
        b = np.asarray(b, dtype=float)
        if self._diag is not None:
            return b / np.sqrt(self._diag if b.ndim == 1 else self._diag[:, None])
        return solve_triangular(self._lower, b, lower=True)


def woodbury_solve(Y, sigma_nu, v):
    """Solve ``(Y Y^T + sigma_nu) x = v`` through the k-by-k inner system.

    ``sigma_nu`` may be a matrix or an :class:`SpdSolver`; ``v`` may hold
    several right-hand sides as columns.
    """
    Y = np.asarray(Y, dtype=float)
    solver = sigma_nu if isinstance(sigma_nu, SpdSolver) else SpdSolver(sigma_nu)
    v = np.asarray(v, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != solver.n or v.shape[0] != solver.n:
        raise DimensionError(f"inconsistent shapes Y{Y.shape}, sigma ({solver.n}), v{v.shape}")
    k = Y.shape[1]
    sv = solver.solve(v)
    if k == 0:
        return sv
    sY = solver.solve(Y)
    inner = np.eye(k) + Y.T @ sY
    inner = 0.5 * (inner + inner.T)
    try:
        c = cho_factor(inner, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Woodbury inner system is not positive definite") from exc
    if np.min(np.abs(np.diag(c[0]))) ** 2 < 1e-14 * np.max(np.abs(inner)):
        raise NumericError("Woodbury inner system is numerically singular")
    return sv - sY @ cho_solve(c, Y.T @ sv)
