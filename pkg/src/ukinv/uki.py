"""Full-covariance unscented Kalman inversion and the reparameterization wrapper."""
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .base import InverseProblem, Tally, misfit
from .errors import ConfigError, DecompositionError, DimensionError, NumericError, VerificationError
from .forward import EvaluationPolicy, Fidelity, evaluate_batch
from .linalg import SpdSolver, psd_sqrt
from .unscented import sigma_points_from_sqrt, sigma_points_full, weighted_deviations


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class UkiHyper:
    """Artificial-dynamics hyperparameters.

    ``Lambda_factor`` optionally carries a square root of ``Lambda``; ensemble
    methods draw their evolution noise through it.
    """

    alpha: float
    r: np.ndarray
    Lambda: np.ndarray
    sigma_omega: np.ndarray
    sigma_nu: np.ndarray
    Lambda_factor: Optional[np.ndarray] = None

    @cached_property
    def nu_solver(self):
        return SpdSolver(self.sigma_nu)

    def initial_state(self):
        return GaussianState(np.array(self.r, dtype=float), np.array(self.Lambda, dtype=float))


def check_alpha(alpha):
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}", field="alpha")
    return float(alpha)


def default_hyper(prior_mean, Lambda, sigma_eta, alpha=1.0, Lambda_factor=None):
    """``r = r0``, ``Sigma_omega = (2 - alpha^2) Lambda``, ``Sigma_nu = 2 Sigma_eta``."""
    alpha = check_alpha(alpha)
    r = np.asarray(prior_mean, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    sigma_eta = np.asarray(sigma_eta, dtype=float)
    if Lambda.shape != (r.size, r.size):
        raise DimensionError(f"Lambda has shape {Lambda.shape}, prior mean size {r.size}")
    return UkiHyper(alpha, r, Lambda, (2.0 - alpha**2) * Lambda, 2.0 * sigma_eta, Lambda_factor)


def uki_predict(state, hyper):
    m, C = state.mean, state.cov
    if m.shape != hyper.r.shape or C.shape != hyper.sigma_omega.shape:
        raise DimensionError("state and hyperparameters have inconsistent dimensions")
    a = hyper.alpha
    return GaussianState(a * m + (1.0 - a) * hyper.r, a * a * C + hyper.sigma_omega)


def _sigma_points(state):
    try:
        return sigma_points_full(state.mean, state.cov)
    except DecompositionError:
        # near convergence C can lose definiteness in floating point
        return sigma_points_from_sqrt(state.mean, psd_sqrt(state.cov))


def _analyze(predicted, model, y, hyper, policy, max_workers=None):
    y = np.asarray(y, dtype=float)
    if y.shape != (model.observation_dim,):
        raise DimensionError(f"y has shape {y.shape}, model produces {model.observation_dim}")
    sigma = _sigma_points(predicted)
    batch = evaluate_batch(model, sigma.points, policy, max_workers)
    Zh, Yh = weighted_deviations(sigma, batch.outputs)
    y_hat = batch.outputs[0]
    c_tp = Zh @ Yh.T
    c_pp = Yh @ Yh.T + hyper.sigma_nu
    try:
        factor = cho_factor(0.5 * (c_pp + c_pp.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError("predicted data covariance is not positive definite") from exc
    gain_t = cho_solve(factor, c_tp.T)  # (C_pp^{-1} C_tp^T)
    mean = predicted.mean + gain_t.T @ (y - y_hat)
    cov = predicted.cov - c_tp @ gain_t
    return GaussianState(mean, 0.5 * (cov + cov.T)), y_hat, batch


def uki_analyze(predicted, model, y, hyper, policy=EvaluationPolicy.ALL_HIGH, max_workers=None):
    """Kalman analysis with unscented estimates of the joint moments."""
    return _analyze(predicted, model, y, hyper, policy, max_workers)[0]


def uki_run(problem: InverseProblem, hyper, n_iter, policy=EvaluationPolicy.ALL_HIGH,
            max_workers=None, record_timing=True, verify=None):
    """Alternate prediction and analysis ``n_iter`` times from ``(r0, Lambda)``.

    ``verify`` is an optional callable invoked with each new state; it raises
    :class:`VerificationError` to abort the run.
    """
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1", field="n_iter")
    state = hyper.initial_state()
    tally = Tally(record_timing)
    out = []
    for it in range(1, n_iter + 1):
        t0 = time.perf_counter()
        state, y_hat, batch = _analyze(uki_predict(state, hyper), problem.model, problem.y_obs,
                                       hyper, policy, max_workers)
        elapsed = time.perf_counter() - t0
        if verify is not None:
            verify(state)
        phi = misfit(problem.y_obs, y_hat, hyper.nu_solver)
        out.append((state, tally.record(it, problem.physical(state.mean), problem.theta_ref,
                                        phi, batch, elapsed)))
    return out


@dataclass(frozen=True)
class Reparameterization:
    """``theta = offset + basis @ tau``."""

    basis: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        if self.basis.ndim != 2 or self.offset.shape != (self.basis.shape[0],):
            raise DimensionError(f"basis {self.basis.shape} and offset {self.offset.shape} disagree")
        if np.linalg.matrix_rank(self.basis) != self.basis.shape[1]:
            raise DimensionError("reparameterization basis must have full column rank")

    @property
    def n_rank(self):
        return self.basis.shape[1]

    def theta(self, tau):
        tau = np.asarray(tau, dtype=float)
        if tau.shape != (self.n_rank,):
            raise DimensionError(f"tau has shape {tau.shape}, expected ({self.n_rank},)")
        return self.offset + self.basis @ tau


def reparam_lift(rp, tau_state):
    U = rp.basis
    if tau_state.cov.shape != (rp.n_rank, rp.n_rank):
        raise DimensionError(f"tau covariance has shape {tau_state.cov.shape}")
    return GaussianState(rp.theta(tau_state.mean), U @ tau_state.cov @ U.T)


class ReparamModel:
    """Forward map in reduced coordinates: ``tau -> G(offset + basis @ tau)``."""

    def __init__(self, model, rp):
        if rp.basis.shape[0] != model.parameter_dim:
            raise DimensionError(f"basis has {rp.basis.shape[0]} rows, model expects {model.parameter_dim}")
        self.base = model
        self.rp = rp
        self.parameter_dim = rp.n_rank
        self.observation_dim = model.observation_dim
        self.thread_safe = getattr(model, "thread_safe", True)
        if hasattr(model, "evaluate_many"):
            self.evaluate_many = self._evaluate_many

    def evaluate(self, tau, fidelity=Fidelity.HIGH):
        return self.base.evaluate(self.rp.theta(tau), fidelity)

    def _evaluate_many(self, taus, fidelity):
        return self.base.evaluate_many(np.array([self.rp.theta(t) for t in taus]), fidelity)


def reparam_wrap(problem, rp, prior_cov=None):
    """The same inverse problem posed over the reduced coordinates ``tau``.

    The prior over ``tau`` has mean zero and covariance ``prior_cov`` (identity
    if omitted); ``theta_ref`` stays physical and is compared after lifting.
    """
    n_r = rp.n_rank
    prior_cov = np.eye(n_r) if prior_cov is None else np.asarray(prior_cov, dtype=float)
    return InverseProblem(
        model=ReparamModel(problem.model, rp),
        y_obs=problem.y_obs,
        sigma_eta=problem.sigma_eta,
        prior_mean=np.zeros(n_r),
        prior_cov=prior_cov,
        theta_ref=problem.theta_ref,
        lift=rp.theta,
        name=f"{problem.name}-reparam" if problem.name else "reparam",
        extras={"reparam": rp},
    )


def covariance_contraction(predicted, updated, tol=1e-9):
    """Raise unless ``predicted.cov - updated.cov`` is PSD up to ``tol * |C_hat|``."""
    gap = np.linalg.eigvalsh(predicted.cov - updated.cov)
    bound = -tol * np.linalg.norm(predicted.cov, 2)
    if gap.min() < bound:
        raise VerificationError(f"analysis increased covariance (min eigenvalue {gap.min():.3e})")


def psd_check(state, tol=1e-9):
    """Raise unless the covariance is symmetric positive semidefinite up to ``tol``."""
    C = state.cov
    scale = max(np.linalg.norm(C, 2), 1e-300)
    if np.linalg.norm(C - C.T, 2) > tol * scale:
        raise VerificationError("covariance lost symmetry")
    low = np.linalg.eigvalsh(C).min()
    if low < -tol * scale:
        raise VerificationError(f"covariance has negative eigenvalue {low:.3e}")
