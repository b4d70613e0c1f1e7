"""Ensemble Kalman inversions: stochastic (EKI), adjustment (EAKI) and transform (ETKI).

Particles are stored as rows, shape (J, N_theta). All random draws come from
per-particle streams keyed on ``(seed, step, particle, purpose)`` so results do
not depend on evaluation order or concurrency.
"""
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .base import InverseProblem, Tally, misfit
from .errors import ConfigError, DimensionError, NumericError, VerificationError
from .forward import EvaluationPolicy, evaluate_batch
from .linalg import psd_sqrt, sym_eig_psd, woodbury_solve

_OMEGA, _NU, _INIT = 0, 1, 2
SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class Ensemble:
    """Particles plus the random-stream state.

    ``mean`` is the analysis mean when it differs from the particle average
    (biased ETKI); otherwise it is ``None`` and the average is used.
    """

    particles: np.ndarray
    seed: int
    step: int = 0
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.particles.ndim != 2 or self.particles.shape[0] < 2:
            raise DimensionError(f"ensemble needs J >= 2 particles as rows, got shape {self.particles.shape}")
        if not np.all(np.isfinite(self.particles)):
            raise NumericError("ensemble has non-finite particles")

    @property
    def size(self):
        return self.particles.shape[0]

    def center(self):
        return self.particles.mean(axis=0) if self.mean is None else self.mean


@dataclass(frozen=True)
class EnsembleDeviations:
    """Scaled deviation matrices: columns ``(x_j - mean) / sqrt(J - 1)``."""

    Z_hat: np.ndarray
    Y_hat: np.ndarray


def _stream(seed, step, j, purpose):
    return np.random.default_rng(np.random.SeedSequence([seed, step, j, purpose]))


def _normals(seed, step, purpose, J, dim):
    return np.stack([_stream(seed, step, j, purpose).standard_normal(dim) for j in range(J)])


def init_ensemble(mean, factor, J, seed):
    """Draw ``J`` particles ``mean + factor @ xi`` with ``xi ~ N(0, I)``."""
    mean = np.asarray(mean, dtype=float)
    factor = np.asarray(factor, dtype=float)
    if factor.shape[0] != mean.size:
        raise DimensionError(f"factor has shape {factor.shape}, mean size {mean.size}")
    if J < 2:
        raise ConfigError("ensemble size must be >= 2", field="ensemble_size")
    xi = _normals(seed, 0, _INIT, J, factor.shape[1])
    return Ensemble(mean + xi @ factor.T, seed)


def noise_factor(hyper):
    """Square root of ``Sigma_omega`` used to draw the evolution noise."""
    scale = math.sqrt(2.0 - hyper.alpha**2)
    if hyper.Lambda_factor is not None:
        return scale * np.asarray(hyper.Lambda_factor, dtype=float)
    return psd_sqrt(hyper.sigma_omega)


def ensemble_predict(ens, hyper, seed=None):
    """``theta_j <- alpha theta_j + (1 - alpha) r + omega_j``, ``omega_j ~ N(0, Sigma_omega)``."""
    seed = ens.seed if seed is None else seed
    step = ens.step + 1
    a = hyper.alpha
    L = noise_factor(hyper)
    omega = _normals(seed, step, _OMEGA, ens.size, L.shape[1]) @ L.T
    return a * ens.particles + (1.0 - a) * hyper.r + omega


def deviations(X):
    """Scaled deviations of the rows of ``X`` from their average, as columns."""
    return (X - X.mean(axis=0)).T / math.sqrt(X.shape[0] - 1)


def _evaluate(model, particles, max_workers):
    return evaluate_batch(model, particles, EvaluationPolicy.ALL_HIGH, max_workers)


def _mean_update(m_hat, Zh, Yh, y, y_hat, hyper):
    return m_hat + Zh @ (Yh.T @ woodbury_solve(Yh, hyper.nu_solver, y - y_hat))


def eki_analysis(theta_hat, outputs, y, hyper, seed, step):
    """Perturbed-observation analysis of predicted particles."""
    J = theta_hat.shape[0]
    Zh, Yh = deviations(theta_hat), deviations(outputs)
    L = hyper.nu_solver.sqrt()
    nu = _normals(seed, step, _NU, J, L.shape[1]) @ L.T
    innov = (y - outputs - nu).T  # (N_y, J)
    return theta_hat + (Zh @ (Yh.T @ woodbury_solve(Yh, hyper.nu_solver, innov))).T


def eki_step(ens, model, y, hyper, rng_seed=None, max_workers=None):
    """Stochastic EKI step; deterministic given ``rng_seed`` (default: the ensemble's seed)."""
    return _eki(ens, model, y, hyper, rng_seed, max_workers)[0]


def _eki(ens, model, y, hyper, rng_seed, max_workers):
    seed = ens.seed if rng_seed is None else rng_seed
    theta_hat = ensemble_predict(ens, hyper, seed)
    batch = _evaluate(model, theta_hat, max_workers)
    new = eki_analysis(theta_hat, batch.outputs, np.asarray(y, dtype=float), hyper, seed, ens.step + 1)
    return Ensemble(new, ens.seed, ens.step + 1), batch.outputs.mean(axis=0), batch


def eaki_factors(Zh, Yh, hyper):
    """Factored pre-multiplier ``A = F sqrt(Dp) U sqrt(D) sqrt(Dp)^-1 F^T``.

    Returns ``(F, left, right)`` with ``A = F @ left @ right @ F.T`` where
    ``left = sqrt(Dp) U sqrt(D)`` and ``right = sqrt(Dp)^-1``, restricted to the
    nonsingular directions of ``Zh``.
    """
    F, s, Vt = np.linalg.svd(Zh, full_matrices=False)
    k = int(np.sum(s > SINGULAR_TOL * s[0])) if s.size and s[0] > 0 else 0
    if k == 0:
        raise NumericError("degenerate ensemble: deviations have zero rank")
    F, s, V = F[:, :k], s[:k], Vt[:k].T
    J = Zh.shape[1]
    K = Yh.T @ hyper.nu_solver.solve(Yh)
    K = 0.5 * (K + K.T)
    # V^T (I + K)^{-1} V written as I - V^T (I + K)^{-1} K V (V^T V = I), which is
    # exactly I when the data carry no information, keeping A = F F^T there
    M = np.eye(k) - V.T @ np.linalg.solve(np.eye(J) + K, K @ V)
    eig = sym_eig_psd(0.5 * (M + M.T))
    U, D = eig.eigenvectors, eig.eigenvalues
    return F, (s[:, None] * U) * np.sqrt(D), np.diag(1.0 / s)


def eaki_matrix(Zh, Yh, hyper):
    """Dense pre-multiplier ``A`` (N_theta x N_theta); for checks on small problems."""
    F, left, right = eaki_factors(Zh, Yh, hyper)
    return F @ left @ right @ F.T


def eaki_analysis(theta_hat, outputs, y, hyper):
    """Deterministic adjustment analysis; returns ``(particles, mean)``."""
    J = theta_hat.shape[0]
    m_hat, y_hat = theta_hat.mean(axis=0), outputs.mean(axis=0)
    Zh, Yh = deviations(theta_hat), deviations(outputs)
    m = _mean_update(m_hat, Zh, Yh, y, y_hat, hyper)
    F, left, right = eaki_factors(Zh, Yh, hyper)
    Z = F @ (left @ (right @ (F.T @ Zh)))
    return m + math.sqrt(J - 1) * Z.T, m


def eaki_step(ens, model, y, hyper, max_workers=None):
    return _deterministic(ens, model, y, hyper, max_workers, "eaki")[0]


def etki_transform(Yh, hyper, unbiased):
    """Post-multiplier ``T = P (Gamma + I)^{-1/2}``, times ``P^T`` when unbiased."""
    sY = hyper.nu_solver.solve(Yh)
    eig = sym_eig_psd(0.5 * (Yh.T @ sY + sY.T @ Yh))
    T = eig.eigenvectors / np.sqrt(eig.eigenvalues + 1.0)
    return T @ eig.eigenvectors.T if unbiased else T


def etki_analysis(theta_hat, outputs, y, hyper, unbiased=True):
    """Deterministic transform analysis; returns ``(particles, mean)``."""
    J = theta_hat.shape[0]
    m_hat, y_hat = theta_hat.mean(axis=0), outputs.mean(axis=0)
    Zh, Yh = deviations(theta_hat), deviations(outputs)
    m = _mean_update(m_hat, Zh, Yh, y, y_hat, hyper)
    Z = Zh @ etki_transform(Yh, hyper, unbiased)
    return m + math.sqrt(J - 1) * Z.T, m


def etki_step(ens, model, y, hyper, unbiased=True, max_workers=None):
    return _deterministic(ens, model, y, hyper, max_workers, "etki-unbiased" if unbiased else "etki")[0]


def _deterministic(ens, model, y, hyper, max_workers, kind):
    theta_hat = ensemble_predict(ens, hyper)
    batch = _evaluate(model, theta_hat, max_workers)
    y = np.asarray(y, dtype=float)
    if kind == "eaki":
        particles, m = eaki_analysis(theta_hat, batch.outputs, y, hyper)
    else:
        particles, m = etki_analysis(theta_hat, batch.outputs, y, hyper, unbiased=kind == "etki-unbiased")
    # the analysis mean is carried only when particles do not average to it
    keep_mean = m if kind == "etki" else None
    return Ensemble(particles, ens.seed, ens.step + 1, keep_mean), batch.outputs.mean(axis=0), batch


METHODS = ("eki", "eaki", "etki", "etki-unbiased")


def ensemble_run(problem: InverseProblem, hyper, n_iter, method, ensemble_size, seed,
                 max_workers=None, record_timing=True, verify=None):
    """Run an ensemble method from particles drawn from the prior.

    ``method`` is one of ``"eki"``, ``"eaki"``, ``"etki"`` (biased transform)
    or ``"etki-unbiased"``. ``verify`` may be a callable ``(initial, current)``.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown ensemble method {method!r}", field="method")
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1", field="n_iter")
    factor = hyper.Lambda_factor if hyper.Lambda_factor is not None else psd_sqrt(hyper.Lambda)
    ens = init_ensemble(hyper.r, factor, ensemble_size, seed)
    first = ens
    tally = Tally(record_timing)
    out = []
    for it in range(1, n_iter + 1):
        t0 = time.perf_counter()
        if method == "eki":
            ens, y_hat, batch = _eki(ens, problem.model, problem.y_obs, hyper, None, max_workers)
        else:
            ens, y_hat, batch = _deterministic(ens, problem.model, problem.y_obs, hyper, max_workers, method)
        elapsed = time.perf_counter() - t0
        if verify is not None:
            verify(first, ens)
        phi = misfit(problem.y_obs, y_hat, hyper.nu_solver)
        out.append((ens, tally.record(it, problem.physical(ens.center()), problem.theta_ref,
                                      phi, batch, elapsed)))
    return out



def span_check(first, ens, hyper, tol=1e-7):
    """Raise :class:`VerificationError` unless every particle lies in the span of
    ``r``, the initial particles and the evolution-noise factor."""
    B = np.column_stack([hyper.r, first.particles.T, noise_factor(hyper)])
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    U = U[:, s > 1e-10 * s[0]]
    for j, x in enumerate(ens.particles):
        resid = np.linalg.norm(x - U @ (U.T @ x))
        if resid > tol * max(np.linalg.norm(x), 1.0):
            raise VerificationError(f"particle {j} left the invariant subspace: residual {resid:.3e}")
