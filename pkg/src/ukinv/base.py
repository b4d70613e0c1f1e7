"""Inverse-problem container, linear models and per-iteration run records."""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError
from .forward import Fidelity
from .linalg import SpdSolver


class LinearModel:
    """``G(theta) = G @ theta``; the reduced fidelity is the same map."""

    thread_safe = True

    def __init__(self, G):
        self.G = np.asarray(G, dtype=float)
        self.observation_dim, self.parameter_dim = self.G.shape

    def evaluate(self, theta, fidelity=Fidelity.HIGH):
        return self.G @ np.asarray(theta, dtype=float)


@dataclass(frozen=True, eq=False)
class InverseProblem:
    """Forward map, data, noise model and prior.

    ``lift`` maps an iterate of the inversion variable back to the physical
    parameter (identity unless the problem was reparameterized); error metrics
    against ``theta_ref`` are taken after lifting.
    """

    model: object
    y_obs: np.ndarray
    sigma_eta: np.ndarray
    prior_mean: np.ndarray
    prior_cov: Optional[np.ndarray] = None
    prior_factor: Optional[np.ndarray] = None
    theta_ref: Optional[np.ndarray] = None
    lift: Optional[Callable] = None
    name: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n_theta, n_y = self.model.parameter_dim, self.model.observation_dim
        if np.shape(self.y_obs) != (n_y,):
            raise DimensionError(f"y_obs has shape {np.shape(self.y_obs)}, model produces {n_y}")
        if np.shape(self.sigma_eta) != (n_y, n_y):
            raise DimensionError(f"sigma_eta has shape {np.shape(self.sigma_eta)}")
        if np.shape(self.prior_mean) != (n_theta,):
            raise DimensionError(f"prior_mean has shape {np.shape(self.prior_mean)}, expected ({n_theta},)")
        if self.prior_cov is not None and np.shape(self.prior_cov) != (n_theta, n_theta):
            raise DimensionError(f"prior_cov has shape {np.shape(self.prior_cov)}")
        if self.prior_factor is not None and np.shape(self.prior_factor)[0] != n_theta:
            raise DimensionError(f"prior_factor has shape {np.shape(self.prior_factor)}")

    @property
    def parameter_dim(self):
        return self.model.parameter_dim

    @property
    def observation_dim(self):
        return self.model.observation_dim

    @cached_property
    def covariance(self):
        """Prior covariance, formed from the factor when only that is given."""
        if self.prior_cov is not None:
            return np.asarray(self.prior_cov, dtype=float)
        if self.prior_factor is None:
            raise DimensionError(f"problem {self.name!r} has no prior covariance")
        Z = np.asarray(self.prior_factor, dtype=float)
        return Z @ Z.T

    def physical(self, mean):
        return mean if self.lift is None else self.lift(mean)


@dataclass(frozen=True)
class RunRecord:
    iter: int
    rel_l2_error: float
    misfit_phi: float
    wall_ms: float
    evals_high: int
    evals_reduced: int

    FIELDS = ("iter", "rel_l2_error", "misfit_phi", "wall_ms", "evals_high", "evals_reduced")


def relative_error(mean, theta_ref):
    if theta_ref is None:
        return float("nan")
    return float(np.linalg.norm(mean - theta_ref) / np.linalg.norm(theta_ref))


def misfit(y, y_hat, sigma_nu):
    """Half the squared noise-weighted data residual."""
    solver = sigma_nu if isinstance(sigma_nu, SpdSolver) else SpdSolver(sigma_nu)
    r = solver.whiten(np.asarray(y, dtype=float) - y_hat)
    return 0.5 * float(r @ r)


class Tally:
    """Cumulative evaluation counts and per-iteration timing for a run."""

    def __init__(self, record_timing=True):
        self.high = 0
        self.reduced = 0
        self.record_timing = record_timing

    def record(self, it, mean_phys, theta_ref, phi, batch, elapsed_s):
        self.high += batch.high_count
        self.reduced += batch.reduced_count
        wall = 1e3 * elapsed_s if self.record_timing else 0.0
        return RunRecord(it, relative_error(mean_phys, theta_ref), phi, wall, self.high, self.reduced)


def tikhonov(theta, r0, Lambda):
    """Prior penalty ``1/2 |Lambda^{-1/2} (theta - r0)|^2`` for a full-rank ``Lambda``.

    Reported apart from the data misfit; not part of the CSV trace.
    """
    d = np.asarray(theta, dtype=float) - np.asarray(r0, dtype=float)
    w = SpdSolver(Lambda).whiten(d)
    return 0.5 * float(w @ w)
