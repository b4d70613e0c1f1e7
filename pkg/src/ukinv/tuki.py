"""Truncated unscented Kalman inversion in square-root form.

The covariance is carried as ``C = Z Z^T`` with ``Z`` of shape (N_theta, N_r)
and is never formed densely. Prediction compresses ``(alpha Z, Z_omega)`` with
a truncated SVD; analysis works entirely with 2N_r x 2N_r matrices through the
Woodbury identity.
"""
import math
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .base import InverseProblem, Tally, misfit
from .errors import ConfigError, DimensionError, RankError, VerificationError
from .forward import EvaluationPolicy, evaluate_batch
from .linalg import SpdSolver, sym_eig_psd, tsvd
from .unscented import covariance_factors, sigma_points_truncated, weighted_deviations
from .uki import check_alpha

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SquareRootState:
    mean: np.ndarray
    factor: np.ndarray

    def std(self):
        """Per-coordinate standard deviation, ``sqrt(diag(Z Z^T))``."""
        return np.sqrt(np.einsum("ij,ij->i", self.factor, self.factor))


@dataclass(frozen=True, eq=False)
class TukiHyper:
    alpha: float
    r: np.ndarray
    Z0: np.ndarray
    Z_omega: np.ndarray
    sigma_nu: np.ndarray

    @property
    def n_rank(self):
        return self.Z0.shape[1]

    @cached_property
    def nu_solver(self):
        return SpdSolver(self.sigma_nu)

    def initial_state(self):
        return SquareRootState(np.array(self.r, dtype=float), np.array(self.Z0, dtype=float))


def numerical_rank(Z, tol=RANK_TOL):
    s = np.linalg.svd(Z, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def tuki_hyper(prior_mean, Z0, sigma_eta, alpha=1.0):
    """Hyperparameters with ``Lambda = Z0 Z0^T``, ``Z_omega = sqrt(2 - alpha^2) Z0``."""
    alpha = check_alpha(alpha)
    r = np.asarray(prior_mean, dtype=float)
    Z0 = np.asarray(Z0, dtype=float)
    if Z0.ndim != 2 or Z0.shape[0] != r.size or Z0.shape[1] == 0:
        raise DimensionError(f"Z0 has shape {Z0.shape}, prior mean size {r.size}")
    if numerical_rank(Z0) != Z0.shape[1]:
        raise RankError("Z0 must have full column rank")
    return TukiHyper(alpha, r, Z0, math.sqrt(2.0 - alpha**2) * Z0, 2.0 * np.asarray(sigma_eta, dtype=float))


def tuki_predict(state, hyper):
    """Predicted mean and the rank-N_r TSVD of ``(alpha Z, Z_omega)``.

    The returned factors decompose the square root; the predicted covariance
    is ``U diag(s^2) U^T``.
    """
    Z = np.asarray(state.factor, dtype=float)
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise DimensionError(f"square-root factor must have at least one column, got shape {Z.shape}")
    if Z.shape[0] != hyper.r.size:
        raise DimensionError(f"factor has {Z.shape[0]} rows, expected {hyper.r.size}")
    a = hyper.alpha
    m_hat = a * state.mean + (1.0 - a) * hyper.r
    return m_hat, tsvd(np.hstack([a * Z, hyper.Z_omega]), hyper.n_rank)


def _analyze(mean, factors, model, y, hyper, policy, compress=True, max_workers=None):
    y = np.asarray(y, dtype=float)
    if y.shape != (model.observation_dim,):
        raise DimensionError(f"y has shape {y.shape}, model produces {model.observation_dim}")
    if factors.rank != hyper.n_rank:
        raise DimensionError(f"factors have rank {factors.rank}, expected {hyper.n_rank}")
    sigma = sigma_points_truncated(mean, covariance_factors(factors))
    batch = evaluate_batch(model, sigma.points, policy, max_workers)
    Zh, Yh = weighted_deviations(sigma, batch.outputs)
    y_hat = batch.outputs[0]
    sY = hyper.nu_solver.solve(Yh)
    eig = sym_eig_psd(0.5 * (Yh.T @ sY + sY.T @ Yh))
    P, g = eig.eigenvectors, eig.eigenvalues
    ZP = Zh @ P
    new_mean = mean + ZP @ ((P.T @ (sY.T @ (y - y_hat))) / (g + 1.0))
    Z = ZP / np.sqrt(g + 1.0)
    if compress:
        # exact: Z has numerical rank N_r
        f = tsvd(Z, hyper.n_rank)
        Z = f.left * f.singular_values
    return SquareRootState(new_mean, Z), y_hat, batch


def tuki_analyze(mean, factors, model, y, hyper, policy=EvaluationPolicy.ALL_HIGH,
                 compress=True, max_workers=None):
    """Square-root analysis step.

    With ``compress=False`` the factor keeps its 2N_r columns exactly as the
    update produces it; by default it is recompressed to N_r columns.
    """
    return _analyze(mean, factors, model, y, hyper, policy, compress, max_workers)[0]


def column_space_angle(Z, Z0, tol=RANK_TOL):
    """Largest principal angle (radians) between the column spaces of ``Z`` and ``Z0``."""
    Z = np.asarray(Z, dtype=float)
    Z0 = np.asarray(Z0, dtype=float)
    if Z.shape[0] != Z0.shape[0]:
        raise DimensionError(f"row counts differ: {Z.shape} vs {Z0.shape}")
    bases = []
    for M in (Z, Z0):
        U, s, _ = np.linalg.svd(M, full_matrices=False)
        k = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
        if k != M.shape[1]:
            raise RankError(f"matrix of shape {M.shape} has numerical rank {k}")
        bases.append(U)
    Q, Q0 = bases
    # sin of the largest angle; accurate near zero unlike arccos of cosines
    resid = Q - Q0 @ (Q0.T @ Q)
    sin_max = np.linalg.norm(resid, 2)
    if Q.shape[1] < Q0.shape[1]:
        resid0 = Q0 - Q @ (Q.T @ Q0)
        sin_max = max(sin_max, np.linalg.norm(resid0, 2))
    return float(np.arcsin(min(1.0, sin_max)))


def subspace_check(state, hyper, angle_tol=1e-7, span_tol=1e-7):
    """Raise :class:`VerificationError` unless the factor keeps rank N_r, stays in
    span(Z0), and the mean stays in span(r, Z0)."""
    rank = numerical_rank(state.factor)
    if rank != hyper.n_rank:
        raise VerificationError(f"factor rank {rank} != {hyper.n_rank}")
    angle = column_space_angle(state.factor, hyper.Z0)
    if angle >= angle_tol:
        raise VerificationError(f"factor left span(Z0): principal angle {angle:.3e}")
    resid = span_residual(state.mean, np.column_stack([hyper.r, hyper.Z0]))
    if resid >= span_tol * max(np.linalg.norm(state.mean), 1e-300):
        raise VerificationError(f"mean left span(r, Z0): residual {resid:.3e}")


def span_residual(v, B):
    """Distance from ``v`` to the column span of ``B``."""
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    U = U[:, s > RANK_TOL * s[0]] if s.size and s[0] > 0 else U[:, :0]
    return float(np.linalg.norm(v - U @ (U.T @ v)))


def tuki_run(problem: InverseProblem, hyper, n_iter, policy=EvaluationPolicy.ALL_HIGH,
             verify=False, max_workers=None, record_timing=True):
    """Run TUKI from ``(r0, Z0)``; ``verify`` asserts the invariant-span checks each iteration."""
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1", field="n_iter")
    state = hyper.initial_state()
    tally = Tally(record_timing)
    out = []
    for it in range(1, n_iter + 1):
        t0 = time.perf_counter()
        m_hat, factors = tuki_predict(state, hyper)
        state, y_hat, batch = _analyze(m_hat, factors, problem.model, problem.y_obs, hyper, policy,
                                       max_workers=max_workers)
        elapsed = time.perf_counter() - t0
        if verify:
            subspace_check(state, hyper)
        phi = misfit(problem.y_obs, y_hat, hyper.nu_solver)
        out.append((state, tally.record(it, problem.physical(state.mean), problem.theta_ref,
                                        phi, batch, elapsed)))
    return out
