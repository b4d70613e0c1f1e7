"""Sigma points and quadrature for the modified and truncated unscented transforms."""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linalg import TsvdFactors, chol_sqrt


@dataclass(frozen=True)
class UtWeights:
    n: int
    a: float
    kappa: float
    lam: float
    c: float
    w_c: float


def ut_weights(n):
    """Constant weights of the unscented rule in dimension ``n``.

    ``kappa = 0``, ``a = min(sqrt(4 / n), 1)``, ``lam = a**2 * n - n``, every
    point spread ``c = sqrt(n + lam)`` and covariance weight
    ``w_c = 1 / (2 (n + lam))``. Whatever ``n`` is, ``c**2 = min(n, 4)``.
    """
    n = int(n)
    if n < 1:
        raise DimensionError(f"unscented dimension must be >= 1, got {n}")
    kappa = 0.0
    a = min(math.sqrt(4.0 / (n + kappa)), 1.0)
    spread2 = a * a * (n + kappa)  # n + lam
    lam = spread2 - n
    return UtWeights(n=n, a=a, kappa=kappa, lam=lam, c=math.sqrt(spread2), w_c=1.0 / (2.0 * spread2))


@dataclass(frozen=True)
class SigmaEnsemble:
    """``2n + 1`` points as rows; row 0 is the mean, rows j and j+n are mirror images."""

    points: np.ndarray
    weights: UtWeights

    @property
    def mean(self):
        return self.points[0]


def _symmetric_points(m, directions, weights):
    offsets = weights.c * directions.T
    return SigmaEnsemble(np.vstack([m, m + offsets, m - offsets]), weights)


def sigma_points_full(m, C):
    """Sigma points along the Cholesky columns of ``C``."""
    m = np.asarray(m, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape != (m.size, m.size):
        raise DimensionError(f"covariance shape {C.shape} does not match mean of size {m.size}")
    return _symmetric_points(m, chol_sqrt(C), ut_weights(m.size))


def sigma_points_from_sqrt(m, Z):
    """Sigma points along the columns of an arbitrary square root ``Z`` (``C = Z Z^T``)."""
    m = np.asarray(m, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != m.size:
        raise DimensionError(f"square root shape {Z.shape} does not match mean of size {m.size}")
    return _symmetric_points(m, Z, ut_weights(Z.shape[1]))


def sigma_points_truncated(m, factors: TsvdFactors):
    """Sigma points along the dominant directions of a covariance.

    ``factors`` is the truncated SVD of the covariance itself: the left vectors
    ``u_j`` and eigenvalues ``d_j``. Points are ``m +/- c sqrt(d_j) u_j``.
    """
    m = np.asarray(m, dtype=float)
    U = np.asarray(factors.left, dtype=float)
    d = np.asarray(factors.singular_values, dtype=float)
    if U.shape[0] != m.size:
        raise DimensionError(f"left vectors have {U.shape[0]} rows, mean has size {m.size}")
    if np.any(d == 0):
        warnings.warn("zero singular value: sigma-point pair collapses onto the mean",
                      RuntimeWarning, stacklevel=2)
    return _symmetric_points(m, U * np.sqrt(np.maximum(d, 0.0)), ut_weights(d.size))


def covariance_factors(sqrt_factors: TsvdFactors):
    """TSVD of ``C = Z Z^T`` given the TSVD of ``Z``."""
    U = sqrt_factors.left
    return TsvdFactors(U, sqrt_factors.singular_values**2, U)


def weighted_deviations(sigma, outputs):
    """Columns ``sqrt(w_c) (theta_j - theta_0)`` and ``sqrt(w_c) (y_j - y_0)``, j >= 1."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    if outputs.shape[0] != sigma.points.shape[0]:
        raise DimensionError(f"{outputs.shape[0]} outputs for {sigma.points.shape[0]} sigma points")
    sw = math.sqrt(sigma.weights.w_c)
    Zh = sw * (sigma.points[1:] - sigma.points[0]).T
    Yh = sw * (outputs[1:] - outputs[0]).T
    return Zh, Yh


def ut_estimate(sigma_outputs, sigma_inputs: SigmaEnsemble):
    """Mean, cross covariance and output covariance of the transformed variable.

    The mean is the output at point 0; covariances are weighted sums over the
    symmetric pairs with deviations taken from the point-0 output.
    """
    Zh, Yh = weighted_deviations(sigma_inputs, sigma_outputs)
    mean = np.atleast_2d(np.asarray(sigma_outputs, dtype=float))[0].copy()
    return mean, Zh @ Yh.T, Yh @ Yh.T
