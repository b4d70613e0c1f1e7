import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ukinv.base import InverseProblem, LinearModel, misfit, tikhonov
from ukinv.errors import ConfigError, DimensionError, VerificationError
from ukinv.forward import EvaluationPolicy, FunctionModel
from ukinv.problems import elliptic_problem, sine_basis
from ukinv.uki import (GaussianState, Reparameterization, ReparamModel, covariance_contraction, default_hyper,
                       psd_check, reparam_lift, reparam_wrap, uki_analyze, uki_predict, uki_run)

from oracles import kalman_analysis, kalman_step, random_spd, rel, weighted_least_squares


def random_linear(seed, n=6, n_y=8):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n_y, n))
    return rng, LinearModel(G), G


def test_hyper_alpha_one():
    h = default_hyper(np.zeros(3), np.eye(3), np.eye(3), 1.0)
    np.testing.assert_array_equal(h.sigma_omega, np.eye(3))
    np.testing.assert_array_equal(h.sigma_nu, 2 * np.eye(3))
    s = h.initial_state()
    np.testing.assert_array_equal(s.mean, np.zeros(3))
    np.testing.assert_array_equal(s.cov, np.eye(3))


def test_hyper_alpha_half():
    h = default_hyper(np.zeros(2), 4 * np.eye(2), np.eye(2), 0.5)
    np.testing.assert_allclose(h.sigma_omega, 7 * np.eye(2), rtol=1e-15)


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_hyper_alpha_range(alpha):
    with pytest.raises(ConfigError) as info:
        default_hyper(np.zeros(2), np.eye(2), np.eye(2), alpha)
    assert info.value.field == "alpha"


def test_predict_examples():
    h = default_hyper(np.ones(2), np.eye(2), np.eye(2), 1.0)
    p = uki_predict(GaussianState(np.array([3.0, 4.0]), 2 * np.eye(2)), h)
    np.testing.assert_array_equal(p.mean, [3.0, 4.0])
    np.testing.assert_array_equal(p.cov, 3 * np.eye(2))
    h = default_hyper(np.ones(2), np.eye(2) / 1.75, np.eye(2), 0.5)
    p = uki_predict(GaussianState(np.zeros(2), np.zeros((2, 2))), h)
    np.testing.assert_allclose(p.mean, [0.5, 0.5])
    np.testing.assert_allclose(p.cov, np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.1, 1.0), st.integers(0, 2**32 - 1))
def test_one_step_matches_kalman(n, n_y, alpha, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n_y, n))
    r, m0, y = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n_y)
    Lam, C0, eta = random_spd(rng, n), random_spd(rng, n), random_spd(rng, n_y)
    h = default_hyper(r, Lam, eta, alpha)
    got = uki_analyze(uki_predict(GaussianState(m0, C0), h), LinearModel(G), y, h)
    m_ref, C_ref = kalman_step(m0, C0, G, y, 2 * eta, alpha, r, (2 - alpha**2) * Lam)
    assert rel(got.mean, m_ref) < 1e-9
    assert rel(got.cov, C_ref) < 1e-9


def test_zero_innovation_keeps_mean():
    rng, model, G = random_linear(0)
    h = default_hyper(np.zeros(6), np.eye(6), np.eye(8))
    pred = GaussianState(rng.standard_normal(6), np.eye(6))
    post = uki_analyze(pred, model, G @ pred.mean, h)
    np.testing.assert_allclose(post.mean, pred.mean, atol=1e-14)


def test_huge_noise_ignores_data():
    rng, model, G = random_linear(1)
    h = default_hyper(np.zeros(6), np.eye(6), 0.5e8 * np.eye(8))
    pred = GaussianState(rng.standard_normal(6), np.eye(6))
    y = rng.standard_normal(8)
    post = uki_analyze(pred, model, y, h)
    assert rel(post.mean, pred.mean) < 1e-6
    m_ref, _ = kalman_analysis(pred.mean, pred.cov, G, y, h.sigma_nu)
    assert rel(post.mean, m_ref) < 1e-9


def test_run_length_one():
    _, model, G = random_linear(2)
    prob = InverseProblem(model, np.ones(8), np.eye(8), np.zeros(6), prior_cov=np.eye(6))
    out = uki_run(prob, default_hyper(np.zeros(6), np.eye(6), np.eye(8)), 1)
    assert len(out) == 1 and out[0][1].iter == 1


def test_alpha_one_converges_to_least_squares():
    rng, model, G = random_linear(3, n=5, n_y=9)
    theta = rng.standard_normal(5)
    eta = random_spd(rng, 9) * 0.01
    y = G @ theta + 0.05 * rng.standard_normal(9)
    prob = InverseProblem(model, y, eta, np.zeros(5), prior_cov=np.eye(5), theta_ref=theta)
    out = uki_run(prob, default_hyper(np.zeros(5), np.eye(5), eta), 50)
    assert rel(out[-1][0].mean, weighted_least_squares(G, y, eta)) < 1e-6
    phis = [rec.misfit_phi for _, rec in out]
    assert abs(phis[-1] - phis[-2]) < 1e-8 * max(phis[-1], 1.0)


def test_contraction_every_step():
    rng = np.random.default_rng(4)
    model = FunctionModel(lambda t: np.array([np.sin(t).sum(), t @ t, t[0] * t[1]]), 3, 3)
    h = default_hyper(np.zeros(3), np.eye(3), 0.1 * np.eye(3))
    state = h.initial_state()
    for _ in range(20):
        pred = uki_predict(state, h)
        state = uki_analyze(pred, model, np.array([0.3, 1.0, -0.2]), h)
        covariance_contraction(pred, state)
        psd_check(state)


def test_contraction_check_detects_growth():
    a = GaussianState(np.zeros(2), np.eye(2))
    b = GaussianState(np.zeros(2), 2 * np.eye(2))
    with pytest.raises(VerificationError):
        covariance_contraction(a, b)


def test_reduced_equal_high_trajectories_identical():
    rng, model, G = random_linear(5)
    prob = InverseProblem(model, rng.standard_normal(8), np.eye(8), np.zeros(6), prior_cov=np.eye(6))
    h = default_hyper(prob.prior_mean, prob.covariance, prob.sigma_eta)
    a = uki_run(prob, h, 5, EvaluationPolicy.ALL_HIGH, record_timing=False)
    b = uki_run(prob, h, 5, EvaluationPolicy.MEAN_HIGH_OTHERS_REDUCED, record_timing=False)
    for (sa, ra), (sb, rb) in zip(a, b):
        np.testing.assert_array_equal(sa.mean, sb.mean)
        np.testing.assert_array_equal(sa.cov, sb.cov)
        assert ra.rel_l2_error == rb.rel_l2_error or np.isnan(ra.rel_l2_error)
    assert a[-1][1].evals_high == 5 * 13 and b[-1][1].evals_high == 5


def test_verify_callable_aborts():
    _, model, _ = random_linear(6)
    prob = InverseProblem(model, np.ones(8), np.eye(8), np.zeros(6), prior_cov=np.eye(6))

    def boom(state):
        raise VerificationError("stop")

    with pytest.raises(VerificationError):
        uki_run(prob, default_hyper(np.zeros(6), np.eye(6), np.eye(8)), 3, verify=boom)


def test_n_iter_must_be_positive():
    _, model, _ = random_linear(7)
    prob = InverseProblem(model, np.ones(8), np.eye(8), np.zeros(6), prior_cov=np.eye(6))
    with pytest.raises(ConfigError):
        uki_run(prob, default_hyper(np.zeros(6), np.eye(6), np.eye(8)), 0)


# --- reparameterization ---------------------------------------------------------

def test_lift_zero_coordinates():
    rng = np.random.default_rng(0)
    U, r0 = rng.standard_normal((6, 2)), rng.standard_normal(6)
    lifted = reparam_lift(Reparameterization(U, r0), GaussianState(np.zeros(2), np.eye(2)))
    np.testing.assert_array_equal(lifted.mean, r0)
    np.testing.assert_allclose(lifted.cov, U @ U.T)


def test_lift_identity_basis():
    rp = Reparameterization(np.eye(3), np.zeros(3))
    s = GaussianState(np.array([1.0, 2.0, 3.0]), np.diag([1.0, 2.0, 3.0]))
    lifted = reparam_lift(rp, s)
    np.testing.assert_array_equal(lifted.mean, s.mean)
    np.testing.assert_array_equal(lifted.cov, s.cov)


def test_lift_elliptic_first_mode():
    _, rp = elliptic_problem(n=50)
    lifted = reparam_lift(rp, GaussianState(np.eye(5)[0], np.eye(5)))
    x = np.arange(1, 51) / 51
    np.testing.assert_allclose(lifted.mean, np.sin(np.pi * x), atol=1e-15)


def test_wrap_linear_columns():
    rng = np.random.default_rng(1)
    G, U, r0 = rng.standard_normal((7, 5)), rng.standard_normal((5, 2)), rng.standard_normal(5)
    base = InverseProblem(LinearModel(G), np.zeros(7), np.eye(7), np.zeros(5), prior_cov=np.eye(5))
    wrapped = reparam_wrap(base, Reparameterization(U, r0))
    np.testing.assert_allclose(wrapped.model.evaluate(np.zeros(2)), G @ r0, atol=1e-14)
    for k in range(2):
        col = wrapped.model.evaluate(np.eye(2)[k]) - G @ r0
        np.testing.assert_allclose(col, (G @ U)[:, k], atol=1e-12)
    with pytest.raises(DimensionError):
        wrapped.model.evaluate(np.zeros(3))


def test_wrap_identity_shift():
    G = np.arange(12.0).reshape(4, 3)
    base = InverseProblem(LinearModel(G), np.zeros(4), np.eye(4), np.zeros(3), prior_cov=np.eye(3))
    r0 = np.array([1.0, 0.0, -1.0])
    wrapped = reparam_wrap(base, Reparameterization(np.eye(3), r0))
    t = np.array([0.5, 0.25, 2.0])
    np.testing.assert_allclose(wrapped.model.evaluate(t), G @ (t + r0))


def test_rank_deficient_basis_rejected():
    with pytest.raises(DimensionError):
        Reparameterization(np.ones((4, 2)), np.zeros(4))


def test_reparam_model_batch_equals_points():
    prob, rp = elliptic_problem(n=40)
    wrapped = ReparamModel(LinearModel(np.eye(40)), rp)
    taus = np.random.default_rng(2).standard_normal((4, 5))
    assert not hasattr(wrapped, "evaluate_many")
    np.testing.assert_array_equal(np.stack([wrapped.evaluate(t) for t in taus]),
                                  np.stack([rp.theta(t) for t in taus]))


def test_reparam_lifted_covariance_rank():
    prob, rp = elliptic_problem(n=200)
    wrapped = reparam_wrap(prob, rp, prob.extras["tau_prior_cov"])
    h = default_hyper(wrapped.prior_mean, wrapped.covariance, wrapped.sigma_eta)
    for state, _ in uki_run(wrapped, h, 10):
        assert np.linalg.matrix_rank(reparam_lift(rp, state).cov) <= 5


# --- metrics --------------------------------------------------------------------

def test_misfit_and_tikhonov_by_hand():
    assert misfit(np.array([1.0, 2.0]), np.zeros(2), 2 * np.eye(2)) == pytest.approx(0.25 * 5)
    assert tikhonov(np.array([2.0, 0.0]), np.zeros(2), 4 * np.eye(2)) == pytest.approx(0.5)


def test_sine_basis_orthogonal():
    x = np.arange(1, 100) / 100
    B = sine_basis(x, 5)
    G = B.T @ B
    np.testing.assert_allclose(G, np.diag(np.diag(G)), atol=1e-10)
