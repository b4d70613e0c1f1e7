"""Acceptance criteria, one test per criterion.

Each test prints ``criterion N: PASS|FAIL ...`` (visible with ``pytest -v``)
and then asserts the criterion at its stated tolerance and runtime budget.
"""
import math
import time

import numpy as np
import pytest

from ukinv.base import LinearModel
from ukinv.cli import build_problem, execute, parse_config, run
from ukinv.ensemble import deviations, eaki_analysis, etki_analysis, etki_transform
from ukinv.linalg import tsvd
from ukinv.problems import elliptic_problem, subspace_distance_mc
from ukinv.tuki import SquareRootState, column_space_angle, tuki_analyze, tuki_hyper, tuki_predict, tuki_run
from ukinv.uki import GaussianState, default_hyper, uki_analyze, uki_predict
from ukinv.unscented import sigma_points_from_sqrt, sigma_points_full, sigma_points_truncated, ut_estimate, ut_weights

from oracles import kalman_step, projection_distance, random_spd, rel, smw_covariance


def report(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {num}: {'PASS' if ok else 'FAIL'} {detail}")


def linear_instances(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, n_y = int(rng.integers(1, 51)), int(rng.integers(1, 51))
        yield rng, n, n_y, rng.standard_normal((n_y, n))


def test_criterion_1_linear_gaussian_exactness(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for rng, n, n_y, G in linear_instances(25, 101):
        alpha = float(rng.uniform(0.1, 1.0))
        r, m0, y = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n_y)
        Lam, C0, eta = random_spd(rng, n), random_spd(rng, n), random_spd(rng, n_y)
        h = default_hyper(r, Lam, eta, alpha)
        got = uki_analyze(uki_predict(GaussianState(m0, C0), h), LinearModel(G), y, h)
        m_ref, C_ref = kalman_step(m0, C0, G, y, 2 * eta, alpha, r, (2 - alpha**2) * Lam)
        worst = max(worst, rel(got.mean, m_ref), rel(got.cov, C_ref))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 1.0
    report(capsys, 1, ok, f"max rel err {worst:.2e} (tol 1e-9), {elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_2_truncated_matches_dense(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for rng, n, n_y, G in linear_instances(20, 202):
        n_r = int(rng.integers(1, min(n, 5) + 1))
        alpha = float(rng.uniform(0.2, 1.0))
        Z0, r = rng.standard_normal((n, n_r)), rng.standard_normal(n)
        eta = random_spd(rng, n_y)
        h = tuki_hyper(r, Z0, eta, alpha)
        state = SquareRootState(r + Z0 @ rng.standard_normal(n_r), Z0)
        y = rng.standard_normal(n_y)
        for _ in range(3):
            m_ref, C_ref = kalman_step(state.mean, state.factor @ state.factor.T, G, y, 2 * eta, alpha, r,
                                       (2 - alpha**2) * Z0 @ Z0.T)
            m_hat, f = tuki_predict(state, h)
            state = tuki_analyze(m_hat, f, LinearModel(G), y, h)
            worst = max(worst, rel(state.mean, m_ref), rel(state.factor @ state.factor.T, C_ref))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 1.0
    report(capsys, 2, ok, f"max rel err {worst:.2e} (tol 1e-8), {elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_3_invariant_subspace_elliptic(capsys):
    prob, _ = elliptic_problem(n=1000)
    Z0 = prob.prior_factor
    out = tuki_run(prob, tuki_hyper(prob.prior_mean, Z0, prob.sigma_eta), 50)
    ranks, angles = [], []
    for state, _ in out:
        s = np.linalg.svd(state.factor, compute_uv=False)
        ranks.append(int(np.sum(s > s[0] * 1e-10)))
        angles.append(column_space_angle(state.factor, Z0))
    ok = len(out) == 50 and set(ranks) == {5} and max(angles) < 1e-7
    report(capsys, 3, ok, f"ranks {sorted(set(ranks))}, max principal angle {max(angles):.2e} (tol 1e-7)")
    assert ok


def test_criterion_4_elliptic_convergence(capsys):
    t0 = time.perf_counter()
    best = {}
    for method in ("uki-reparam", "tuki", "eki", "eaki", "etki", "etki-unbiased"):
        doc = {"problem": "elliptic", "method": method, "n_iter": 30, "n": 1000, "n_rank": 5, "alpha": 1.0}
        if method not in ("uki-reparam", "tuki"):
            doc.update(seed=0, ensemble_size=11)
        cfg = parse_config(doc)
        errs = [r.rel_l2_error for r in execute(cfg).records]
        best[method] = min(errs)
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-2 for v in best.values()) and elapsed < 30
    detail = ", ".join(f"{k} {v:.4f}" for k, v in best.items())
    report(capsys, 4, ok, f"best error within 30 iterations: {detail} (tol 1e-2), {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_5_bernoulli_floor(capsys):
    t0 = time.perf_counter()
    rows = []
    ok = True
    for method in ("tuki", "eki", "eaki", "etki", "etki-unbiased"):
        doc = {"problem": "bernoulli", "method": method, "n_iter": 30, "n": 1000, "n_rank": 5, "seed": 0}
        if method != "tuki":
            doc["ensemble_size"] = 11
        cfg = parse_config(doc)
        result = execute(cfg)
        prob, _ = build_problem(cfg)
        # every iterate lies in span(prior mean, Z0): best approximation in that span
        basis = np.column_stack([prob.prior_mean, prob.prior_factor])
        floor = projection_distance(prob.theta_ref, basis) / np.linalg.norm(prob.theta_ref)
        errs = np.array([r.rel_l2_error for r in result.records])
        ok &= bool(np.all(errs >= floor - 1e-12) and errs[-1] >= 0.5)
        rows.append(f"{method} min {errs.min():.4f} final {errs[-1]:.4f} floor {floor:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    report(capsys, 5, ok, "; ".join(rows) + f", {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_6_subspace_distance(capsys):
    t0 = time.perf_counter()
    theta = np.ones(1000) / math.sqrt(1000)
    est, se = subspace_distance_mc(1000, 5, theta, 200, seed=0)
    est, se = est / (theta @ theta), se / (theta @ theta)
    elapsed = time.perf_counter() - t0
    ok = abs(est - 0.995) < 4 * se and elapsed < 10
    report(capsys, 6, ok, f"estimate {est:.5f} +- {se:.1e} vs 0.995 (4 stderr), {elapsed:.2f}s (< 10s)")
    assert ok


def test_criterion_7_square_root_covariance(capsys):
    t0 = time.perf_counter()
    worst_cov = worst_sum = 0.0
    rng = np.random.default_rng(707)
    for _ in range(30):
        n, J, n_y = int(rng.integers(2, 31)), int(rng.integers(2, 16)), int(rng.integers(1, 12))
        theta, outputs = rng.standard_normal((J, n)), rng.standard_normal((J, n_y))
        hyper = default_hyper(np.zeros(n), np.eye(n), random_spd(rng, n_y))
        Zh, Yh = deviations(theta), deviations(outputs)
        ref = smw_covariance(Zh, Yh, hyper.sigma_nu)
        y = rng.standard_normal(n_y)
        for particles, m in (eaki_analysis(theta, outputs, y, hyper),
                             etki_analysis(theta, outputs, y, hyper, unbiased=False),
                             etki_analysis(theta, outputs, y, hyper, unbiased=True)):
            Z = (particles - m).T / np.sqrt(J - 1)
            worst_cov = max(worst_cov, rel(Z @ Z.T, ref))
        Z = Zh @ etki_transform(Yh, hyper, unbiased=True)
        worst_sum = max(worst_sum, float(np.max(np.abs(Z.sum(axis=1)))))
    elapsed = time.perf_counter() - t0
    ok = worst_cov < 1e-8 and worst_sum < 1e-10 and elapsed < 1.0
    report(capsys, 7, ok, f"max rel cov err {worst_cov:.2e} (tol 1e-8), max |Z 1| {worst_sum:.2e} "
                          f"(tol 1e-10), {elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_8_reduced_model_policy(capsys):
    t0 = time.perf_counter()
    recs = {}
    for policy in ("mean-high-others-reduced", "all-high"):
        cfg = parse_config({"problem": "twofid", "method": "uki", "n_iter": 30, "seed": 0, "policy": policy})
        recs[policy] = execute(cfg).records
    elapsed = time.perf_counter() - t0
    mh, ah = recs["mean-high-others-reduced"], recs["all-high"]
    e_mh, e_ah = mh[-1].rel_l2_error, ah[-1].rel_l2_error
    ok = (e_mh < 5e-2 and mh[-1].evals_high == 30 and ah[-1].evals_high == 30 * 17
          and e_mh <= 2 * e_ah and elapsed < 60)
    report(capsys, 8, ok, f"MeanHigh error {e_mh:.4f} (tol 5e-2) with {mh[-1].evals_high} high evals; "
                          f"AllHigh error {e_ah:.4f} with {ah[-1].evals_high}; ratio {e_mh / e_ah:.2f} (<= 2), "
                          f"{elapsed:.1f}s (< 60s)")
    assert ok


def _unscented_suite():
    t0 = time.perf_counter()
    identity = {n: 2 * n * ut_weights(n).w_c * ut_weights(n).c ** 2 for n in (1, 4, 100, 10**5)}
    rng = np.random.default_rng(909)
    lin = 0.0
    for n, n_y, r in ((5, 3, None), (12, 7, None), (30, 4, 3)):
        m, G = rng.standard_normal(n), rng.standard_normal((n_y, n))
        if r is None:
            C = random_spd(rng, n)
            sigma = sigma_points_full(m, C)
        else:
            Z = rng.standard_normal((n, r))
            f = tsvd(Z @ Z.T, r)
            C, sigma = f.reconstruct(), sigma_points_truncated(m, f)
        mean, cross, cov = ut_estimate(np.stack([G @ p for p in sigma.points]), sigma)
        lin = max(lin, rel(mean, G @ m), rel(cross, C @ G.T), rel(cov, G @ C @ G.T))
    flip = 0.0
    model = lambda X: np.column_stack([np.sin(X).sum(1), (X**2).sum(1), np.exp(0.1 * X[:, 0])])
    for n in (1, 3, 6):
        m, L = rng.standard_normal(n), np.linalg.cholesky(random_spd(rng, n))
        s = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        a, b = sigma_points_from_sqrt(m, L), sigma_points_from_sqrt(m, L * s)
        for x, y in zip(ut_estimate(model(a.points), a), ut_estimate(model(b.points), b)):
            flip = max(flip, float(np.max(np.abs(x - y))) / max(1.0, float(np.max(np.abs(x)))))
    return identity, lin, flip, time.perf_counter() - t0


# The stated identity 2n w_c c^2 = 1 contradicts the stated weight definitions,
# which give 2 w_c c^2 = 1 exactly (i.e. 2n w_c c^2 = n). The check is run as
# written and is expected to fail for every n > 1.
@pytest.mark.xfail(strict=True, reason="literal weight identity 2n*w_c*c^2 = 1 only holds for n = 1")
def test_criterion_9_unscented_suite(capsys):
    identity, lin, flip, elapsed = _unscented_suite()
    id_ok = all(abs(v - 1.0) < 1e-12 for v in identity.values())
    ok = id_ok and lin < 1e-10 and flip < 1e-12 and elapsed < 1.0
    values = ", ".join(f"n={n}: {v:.6g}" for n, v in identity.items())
    report(capsys, 9, ok, f"2n*w_c*c^2 [{values}] (want 1); linear exactness {lin:.1e} (tol 1e-10); "
                          f"sign flip {flip:.1e} (tol 1e-12); {elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_9_remaining_parts_hold():
    # the rest of the suite, plus the per-pair identity the weights do satisfy
    identity, lin, flip, elapsed = _unscented_suite()
    for n, v in identity.items():
        assert abs(v / n - 1.0) < 1e-12
    assert lin < 1e-10 and flip < 1e-12 and elapsed < 1.0


def test_criterion_10_determinism(tmp_path, capsys):
    cases = [("uki", {}), ("uki-reparam", {}), ("tuki", {}), ("eaki", {"seed": 4}), ("etki", {"seed": 4}),
             ("etki-unbiased", {"seed": 4}), ("eki", {"seed": 4}), ("eki", {"seed": 4, "max_workers": 4})]
    differ = []
    for k, (method, extra) in enumerate(cases):
        base = {"problem": "elliptic", "method": method, "n_iter": 10, "n": 200, "record_timing": False, **extra}
        paths = [tmp_path / f"{k}-{i}.csv" for i in range(2)]
        for p in paths:
            run(parse_config(base), out=str(p))
        if paths[0].read_bytes() != paths[1].read_bytes():
            differ.append(method)
    # the serial and the threaded EKI runs must agree with each other as well
    if (tmp_path / "6-0.csv").read_bytes() != (tmp_path / "7-0.csv").read_bytes():
        differ.append("eki serial vs threaded")
    twofid = {"problem": "twofid", "method": "uki", "n_iter": 5, "seed": 1, "record_timing": False,
              "policy": "mean-high-others-reduced"}
    a, b = tmp_path / "tf-a.csv", tmp_path / "tf-b.csv"
    run(parse_config(twofid), out=str(a))
    run(parse_config({**twofid, "max_workers": 4}), out=str(b))
    if a.read_bytes() != b.read_bytes():
        differ.append("twofid serial vs threaded")
    ok = not differ
    report(capsys, 10, ok, f"{len(cases) + 2} rerun pairs byte-identical" if ok else f"differences: {differ}")
    assert ok
