"""Benchmark inverse problems and the random-subspace Monte Carlo experiment."""
import numpy as np

from .base import InverseProblem, LinearModel
from .errors import DimensionError, InputError
from .forward import Fidelity
from .kernels import diffusion_system, tridiag_solve_batch
from .uki import Reparameterization


def interior_grid(n):
    """n interior nodes of a uniform grid on [0, 1]: x_i = i / (n + 1)."""
    return np.arange(1, n + 1) / (n + 1)


def elliptic_operator(n):
    """Finite-difference matrix of ``-d^2/dx^2 + 1`` with zero Dirichlet ends."""
    h = 1.0 / (n + 1)
    G = np.diag(np.full(n, 2.0 / h**2 + 1.0))
    off = np.full(n - 1, -1.0 / h**2)
    return G + np.diag(off, 1) + np.diag(off, -1)


def sine_basis(x, n_modes):
    return np.column_stack([np.sin(k * np.pi * x) for k in range(1, n_modes + 1)])


def elliptic_problem(n=1000, n_rank=5):
    """Recover the solution of ``-theta'' + theta = f`` from observations of ``f``.

    ``f`` is 1 on [0, 1/2] and 2 on (1/2, 1]. Returns the problem (prior
    ``N(0, Z0 Z0^T)`` with ``Z0 = 10 * sine basis``) and the sine-basis
    reparameterization; the reduced prior over ``tau`` is ``N(0, 100 I)``.
    """
    if n < 3:
        raise DimensionError("elliptic problem needs n >= 3")
    x = interior_grid(n)
    G = elliptic_operator(n)
    f = np.where(x <= 0.5, 1.0, 2.0)
    U = sine_basis(x, n_rank)
    problem = InverseProblem(
        model=LinearModel(G),
        y_obs=f,
        sigma_eta=np.eye(n),
        prior_mean=np.zeros(n),
        prior_factor=10.0 * U,
        theta_ref=np.linalg.solve(G, f),
        name="elliptic",
        extras={"x": x, "G": G, "tau_prior_cov": 100.0 * np.eye(n_rank)},
    )
    return problem, Reparameterization(U, np.zeros(n))


def bernoulli_problem(n=1000, seed=0, n_rank=5):
    """Identity forward map with a Bernoulli(1/2) truth and prior ``N(0, I)``.

    ``y_obs = theta_ref`` exactly. The low-rank factor for truncated methods
    is an ``n x n_rank`` standard Gaussian matrix drawn from the same seed.
    """
    if n < 1:
        raise DimensionError("bernoulli problem needs n >= 1")
    rng = np.random.default_rng(seed)
    theta_ref = rng.integers(0, 2, size=n).astype(float)
    Z0 = rng.standard_normal((n, n_rank))
    return InverseProblem(
        model=LinearModel(np.eye(n)),
        y_obs=theta_ref.copy(),
        sigma_eta=np.eye(n),
        prior_mean=np.zeros(n),
        prior_cov=np.eye(n),
        prior_factor=Z0,
        theta_ref=theta_ref,
        name="bernoulli",
    )


def subspace_distance_mc(n_theta, J, theta_ref, trials, seed):
    """Monte Carlo mean of the squared distance from ``theta_ref`` to the span of
    ``J`` standard Gaussian vectors in dimension ``n_theta``.

    Returns ``(estimate, stderr)``; the exact expectation is
    ``(1 - J / n_theta) * |theta_ref|^2``.
    """
    theta_ref = np.asarray(theta_ref, dtype=float)
    if theta_ref.shape != (n_theta,):
        raise DimensionError(f"theta_ref has shape {theta_ref.shape}, expected ({n_theta},)")
    if not 1 <= J <= n_theta:
        raise DimensionError(f"J = {J} outside [1, {n_theta}]")
    if trials < 1:
        raise InputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    norm2 = float(theta_ref @ theta_ref)
    d2 = np.empty(trials)
    for t in range(trials):
        Q, _ = np.linalg.qr(rng.standard_normal((n_theta, J)))
        proj = Q.T @ theta_ref
        d2[t] = max(norm2 - float(proj @ proj), 0.0)
    stderr = float(d2.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
    return float(d2.mean()), stderr


def noisy_observe(y_ref, level, seed):
    """``y_ref * (1 + level * xi)`` with seeded standard normal ``xi``."""
    if level < 0:
        raise InputError("noise level must be >= 0")
    y_ref = np.asarray(y_ref, dtype=float)
    xi = np.random.default_rng(seed).standard_normal(y_ref.shape)
    return y_ref * (1.0 + level * xi)


class DiffusionModel:
    """Steady 1-D diffusion ``-(a u')' = s`` on (0, 1), ``u(0) = u(1) = 0``.

    The unknowns are sine coefficients of ``log a``; the data are ``u`` at
    fixed stations, linearly interpolated from the grid. High fidelity uses
    ``n_fine`` interior nodes and the reduced model ``n_coarse``.
    """

    thread_safe = True

    def __init__(self, n_fine=128, n_coarse=32, n_params=8, stations=None, source=None):
        if not n_coarse < n_fine:
            raise DimensionError("n_coarse must be smaller than n_fine")
        if n_params > n_coarse:
            raise DimensionError("n_params must not exceed n_coarse")
        self.parameter_dim = n_params
        self.stations = np.arange(1, 17) / 17.0 if stations is None else np.asarray(stations, dtype=float)
        self.observation_dim = self.stations.size
        self.source = source if source is not None else self.default_source
        self._grids = {Fidelity.HIGH: self._grid(n_fine), Fidelity.REDUCED: self._grid(n_coarse)}

    @staticmethod
    def default_source(x):
        # a single narrow central source keeps |a u'| bounded away from zero on
        # both halves of the domain, so every conductivity mode is observable
        return 10.0 * np.exp(-(((x - 0.5) / 0.05) ** 2))

    def _grid(self, n):
        h = 1.0 / (n + 1)
        x = interior_grid(n)
        faces = (np.arange(n + 1) + 0.5) * h
        return {
            "n": n,
            "h": h,
            "x": np.concatenate([[0.0], x, [1.0]]),
            "face_basis": sine_basis(faces, self.parameter_dim),
            "rhs": self.source(x),
        }

    def conductivity(self, theta, fidelity=Fidelity.HIGH):
        g = self._grids[fidelity]
        return np.exp(g["face_basis"] @ np.asarray(theta, dtype=float))

    def solve(self, thetas, fidelity=Fidelity.HIGH):
        """Grid solutions (k, n) for a stack of parameter vectors."""
        g = self._grids[fidelity]
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.parameter_dim:
            raise DimensionError(f"parameters have dimension {thetas.shape[1]}, expected {self.parameter_dim}")
        # per-point loop keeps each row's arithmetic independent of batch size
        coef = np.stack([self.conductivity(t, fidelity) for t in thetas])
        lower, diag, upper = diffusion_system(coef, g["h"])
        rhs = np.broadcast_to(g["rhs"], diag.shape)
        return tridiag_solve_batch(lower, diag, upper, rhs)

    def evaluate_many(self, thetas, fidelity=Fidelity.HIGH):
        g = self._grids[fidelity]
        u = self.solve(thetas, fidelity)
        padded = np.pad(u, ((0, 0), (1, 1)))
        return np.stack([np.interp(self.stations, g["x"], row) for row in padded])

    def evaluate(self, theta, fidelity=Fidelity.HIGH):
        return self.evaluate_many(np.asarray(theta, dtype=float)[None, :], fidelity)[0]


TWOFID_THETA_REF = np.array([2.0, -1.2, 1.0, -0.6, 0.4, -0.3, 0.2, -0.1])
TWOFID_PRIOR_STD = 0.1


def twofid_diffusion_problem(n_fine=128, n_coarse=32, n_params=8, noise_level=0.01, seed=0,
                             theta_ref=None):
    """Two-fidelity diffusion inversion for exercising the reduced-model policy.

    Data are the fine-grid solution at 16 stations with ``noise_level``
    multiplicative Gaussian noise; ``Sigma_eta = diag((noise_level * y_obs)^2)``
    and the prior is ``N(0, TWOFID_PRIOR_STD^2 I)``. The prior is kept narrow
    because with ``alpha = 1`` the stationary sigma-point spread grows with it,
    and a wide spread biases the fixed point on this nonlinear map.
    """
    model = DiffusionModel(n_fine, n_coarse, n_params)
    if theta_ref is None:
        theta_ref = np.zeros(n_params)
        k = min(n_params, TWOFID_THETA_REF.size)
        theta_ref[:k] = TWOFID_THETA_REF[:k]
    theta_ref = np.asarray(theta_ref, dtype=float)
    y_ref = model.evaluate(theta_ref, Fidelity.HIGH)
    y_obs = noisy_observe(y_ref, noise_level, seed)
    scale = np.maximum(noise_level * np.abs(y_obs), 1e-8)
    return InverseProblem(
        model=model,
        y_obs=y_obs,
        sigma_eta=np.diag(scale**2),
        prior_mean=np.zeros(n_params),
        prior_cov=TWOFID_PRIOR_STD**2 * np.eye(n_params),
        prior_factor=TWOFID_PRIOR_STD * np.eye(n_params),
        theta_ref=theta_ref,
        name="twofid",
        extras={"y_ref": y_ref},
    )
