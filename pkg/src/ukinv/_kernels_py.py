"""Pure-NumPy fallbacks for the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def tridiag_solve_batch(lower, diag, upper, rhs):
    """Solve k independent tridiagonal systems with the Thomas algorithm.

    All arguments have shape (k, n). Row i of system b reads
    ``lower[b, i] x[i-1] + diag[b, i] x[i] + upper[b, i] x[i+1] = rhs[b, i]``;
    ``lower[:, 0]`` and ``upper[:, -1]`` are ignored. No pivoting: intended for
    diagonally dominant systems.
    """
    lower, diag, upper, rhs = (np.asarray(a, dtype=float) for a in (lower, diag, upper, rhs))
    k, n = diag.shape
    cp = np.empty((k, n))
    dp = np.empty((k, n))
    cp[:, 0] = upper[:, 0] / diag[:, 0]
    dp[:, 0] = rhs[:, 0] / diag[:, 0]
    for i in range(1, n):
        denom = diag[:, i] - lower[:, i] * cp[:, i - 1]
        cp[:, i] = upper[:, i] / denom
        dp[:, i] = (rhs[:, i] - lower[:, i] * dp[:, i - 1]) / denom
    x = np.empty((k, n))
    x[:, n - 1] = dp[:, n - 1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x


def diffusion_system(face_coef, h):
    """Tridiagonal coefficients of ``-(a u')'`` on n interior nodes.

    ``face_coef`` has shape (k, n + 1): conductivity at the cell faces
    x_{i -/+ 1/2}. Returns ``(lower, diag, upper)`` each of shape (k, n).
    """
    a = np.asarray(face_coef, dtype=float)
    inv_h2 = 1.0 / (h * h)
    lower = -a[:, :-1] * inv_h2
    upper = -a[:, 1:] * inv_h2
    diag = (a[:, :-1] + a[:, 1:]) * inv_h2
    return lower, diag, upper
