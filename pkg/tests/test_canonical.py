import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bgadj import rng
from bgadj.canonical import (CanonicalParams, canonicalize, canonicalize_model,
                             decision_interval, h_univariate, hard_cdf_univariate,
                             hard_contrast_cdf_mc, log_ratio_latent, log_ratio_r,
                             simulate_hard_scores)
from bgadj.errors import DegenerateParametersError
from bgadj.mixture import MixtureModel, assign, responsibilities, standardize_t1
from bgadj.spdcore import norm_cdf, spd_inv_sqrt, spd_sqrt
from conftest import random_spd


def theta1(tau, delta1, pi1):
    return CanonicalParams([delta1], [[tau]], 2 * math.log((1 - pi1) / pi1))


def test_identity_covariances():
    th = canonicalize([1.0, -2.0], [0.0, 0.0], np.eye(2), np.eye(2), 0.5, 0.5)
    assert np.allclose(th.delta1, [1, -2]) and np.allclose(th.tau, np.eye(2))
    assert np.allclose(th.delta2, th.delta1) and th.pi0 == 0.0


def test_case_one_tau_matrix():
    s1 = np.array([[1.0, 0.5], [0.5, 1.0]])
    th = canonicalize([1.0, 1.0], [0.0, 0.0], s1, np.eye(2), 0.3, 0.7)
    assert np.allclose(th.tau, [[0.9659258, 0.2588190], [0.2588190, 0.9659258]], atol=1e-7)
    assert np.allclose(th.tau.T @ th.tau, s1, atol=1e-12)
    assert th.pi0 == pytest.approx(2 * math.log(0.7 / 0.3))
    # delta1 along (1, 1) has length sqrt(2 / (1 + rho))
    assert np.linalg.norm(th.delta1) == pytest.approx(math.sqrt(2 / 1.5), rel=1e-12)


def test_vanishing_class_is_degenerate_not_error():
    th = canonicalize([1.0], [0.0], [[1.0]], [[2.0]], 0.0, 1.0)
    assert th.pi0 == math.inf and th.in_theta0 and th.pi1 == 0.0
    th = canonicalize([1.0], [0.0], [[1.0]], [[2.0]], 1.0, 0.0)
    assert th.pi0 == -math.inf and th.in_theta0


def test_affine_invariance(gen):
    s1, s2 = random_spd(gen, 2), random_spd(gen, 2)
    mu1, mu2 = gen.normal(size=2), gen.normal(size=2)
    th = canonicalize(mu1, mu2, s1, s2, 0.4, 0.6)
    # translating both means and scaling both covariances by c^2 (means by c)
    c, shift = 2.5, gen.normal(size=2)
    th2 = canonicalize(c * mu1 + shift, c * mu2 + shift, c * c * s1, c * c * s2, 0.4, 0.6)
    assert np.allclose(th.delta1, th2.delta1) and np.allclose(th.tau, th2.tau)


def test_log_ratio_direct_and_latent(gen):
    same = MixtureModel([[1.0], [1.0]], [[[2.0]], [[2.0]]], [0.5, 0.5])
    assert np.allclose(log_ratio_r(gen.normal(size=(20, 1)), same), 0.0)
    m = MixtureModel([[0.0], [2.0]], [[[1.0]], [[1.0]]], [0.5, 0.5])
    assert log_ratio_r([[0.0]], m)[0] == pytest.approx(4.0)
    for _ in range(20):
        s1, s2 = random_spd(gen, 2), random_spd(gen, 2)
        mu1, mu2 = gen.normal(size=2), gen.normal(size=2)
        m = MixtureModel([mu1, mu2], [s1, s2], [0.3, 0.7])
        th = canonicalize_model(m)
        z = gen.standard_normal((500, 2))
        lab = gen.random(500) < 0.3
        root1, root2 = spd_sqrt(s1).values, spd_sqrt(s2).values
        y = np.where(lab[:, None], mu1 + z @ root1.T, mu2 + z @ root2.T)
        assert np.allclose(log_ratio_r(y, m), log_ratio_latent(z, lab, th), atol=1e-9)


def test_hard_rule_matches_ratio_threshold(gen):
    m = MixtureModel([[0.0], [1.5]], [[[2.0]], [[0.5]]], [0.3, 0.7])
    th = canonicalize_model(m)
    y = gen.normal(0.5, 2.0, (2000, 1))
    s = assign(responsibilities(y, m), "hard")
    r = log_ratio_r(y, m)
    assert np.array_equal(s[:, 0] == 1.0, r >= th.pi0)


def test_parametrization_sufficiency(gen):
    # two full parameter sets sharing (delta1, tau, pi0) give identical scores
    s1, s2 = random_spd(gen, 2), random_spd(gen, 2)
    mu1, mu2 = gen.normal(size=2), gen.normal(size=2)
    shift = gen.normal(size=2)
    m1 = MixtureModel([mu1, mu2], [s1, s2], [0.35, 0.65])
    c = 3.0
    m2 = MixtureModel([c * mu1 + shift, c * mu2 + shift], [c * c * s1, c * c * s2], [0.35, 0.65])
    th1, th2 = canonicalize_model(m1), canonicalize_model(m2)
    assert np.allclose(th1.delta1, th2.delta1) and np.allclose(th1.tau, th2.tau)
    z = gen.standard_normal((300, 2))
    lab = gen.random(300) < 0.35
    outs = []
    for m in (m1, m2):
        roots = [spd_sqrt(cv).values for cv in m.covs]
        y = np.where(lab[:, None], m.means[0] + z @ roots[0].T, m.means[1] + z @ roots[1].T)
        w = responsibilities(y, m)
        outs.append(np.array([standardize_t1(y[i], w[i], m) for i in range(300)]))
    assert np.allclose(outs[0], outs[1], atol=1e-10)


# -- decision interval --------------------------------------------------------


def test_interval_equal_scale_branch():
    d = decision_interval(CanonicalParams([2.0], [[1.0]], 0.0))
    assert d.lower == -math.inf and d.upper == pytest.approx(-1.0)
    d = decision_interval(CanonicalParams([-2.0], [[1.0]], 0.0))
    assert d.lower == pytest.approx(1.0) and d.upper == math.inf


def test_interval_centered_case():
    d = decision_interval(CanonicalParams([0.0], [[2.0]], 0.0))
    half = math.sqrt(6 * math.log(2)) / 3
    assert d.lower == pytest.approx(-half, abs=1e-12) and d.upper == pytest.approx(half, abs=1e-12)
    th = CanonicalParams([0.0], [[2.0]], 0.0)
    assert np.allclose(h_univariate([d.lower, d.upper], th), 0.0, atol=1e-12)


def test_interval_continuous_in_scale_near_one():
    base = decision_interval(CanonicalParams([1.3], [[1.0]], 0.4))
    for eps in (1e-4, 1e-7, 1e-10):
        th = CanonicalParams([1.3 / (1 + eps)], [[1.0 + eps]], 0.4)
        d = decision_interval(th)
        assert d.upper == pytest.approx(base.upper, abs=1e-3 if eps > 1e-5 else 1e-6)
        assert d.lower < -1e3


def test_interval_degenerate_raises():
    with pytest.raises(DegenerateParametersError):
        decision_interval(CanonicalParams([0.0], [[1.0]], 0.3))


def test_interval_membership_many_random(gen):
    for _ in range(10_000):
        tau = gen.uniform(1.0, 4.0)
        d2 = gen.uniform(-3, 3)
        pi0 = gen.uniform(-4, 4)
        th = CanonicalParams([d2 / tau], [[tau]], pi0)
        d = decision_interval(th)
        x = gen.uniform(-8, 8, 5)
        inside = d.contains(x)
        hv = h_univariate(x, th)
        # stay clear of the endpoints where rounding can flip the sign
        clear = np.abs(hv - pi0) > 1e-9
        assert np.array_equal(inside[clear], (hv < pi0)[clear])


def test_endpoints_solve_boundary(gen):
    for _ in range(500):
        tau = gen.uniform(1.01, 4.0)
        th = CanonicalParams([gen.uniform(-3, 3)], [[tau]], gen.uniform(-4, 4))
        d = decision_interval(th)
        for e in (d.lower, d.upper):
            if np.isfinite(e) and d.lower < d.upper:
                assert h_univariate(e, th) == pytest.approx(th.pi0, abs=1e-8 * max(1, abs(e) ** 2))


# -- exact cdf ----------------------------------------------------------------


def test_cdf_limits_and_monotone(gen):
    for _ in range(50):
        th = theta1(gen.uniform(0.3, 3), gen.uniform(-3, 3), gen.uniform(0.05, 0.95))
        t = np.linspace(-12, 12, 1000)
        f = hard_cdf_univariate(t, th)
        assert np.all(np.diff(f) >= -1e-15)
        assert f[0] < 1e-6 and f[-1] > 1 - 1e-6
        assert hard_cdf_univariate(np.inf, th) == pytest.approx(1.0, abs=1e-15)
        assert hard_cdf_univariate(-np.inf, th) == pytest.approx(0.0, abs=1e-15)


def test_cdf_close_to_normal_for_dominant_class():
    th = theta1(1.5, 1.0, 0.999)
    t = np.linspace(-6, 6, 2001)
    assert np.max(np.abs(hard_cdf_univariate(t, th) - norm_cdf(t))) < 0.01


@pytest.mark.parametrize("tau,delta1,pi1", [(1.5, 1.0, 0.3), (1.0, 0.8, 0.6), (2.5, -1.2, 0.8), (0.6, 1.1, 0.4)])
def test_cdf_matches_simulation(tau, delta1, pi1):
    th = theta1(tau, delta1, pi1)
    t = np.linspace(-4, 4, 41)
    exact = hard_cdf_univariate(t, th)
    mc = hard_contrast_cdf_mc(t, [1.0], th, reps=100_000, seed=3)
    se = np.maximum(np.sqrt(exact * (1 - exact) / mc.reps), mc.se)
    assert np.all(np.abs(exact - mc.value) <= 4 * se + 1e-12)


def test_simulated_scores_match_direct_standardization(gen):
    m = MixtureModel([[1.2], [0.0]], [[[2.25]], [[1.0]]], [0.3, 0.7])
    th = canonicalize_model(m)
    g1 = rng.stream(9, 1)
    out = simulate_hard_scores(th, 5000, g1)
    g2 = rng.stream(9, 1)
    z = g2.standard_normal((5000, 1))
    s1 = g2.random(5000) < th.pi1
    y = np.where(s1[:, None], 1.2 + 1.5 * z, z)
    s = assign(responsibilities(y, m), "hard")
    direct = np.array([standardize_t1(y[i], s[i], m) for i in range(5000)])
    # the latent form standardizes in the class-2 frame when label 2 is chosen
    assert np.allclose(out, direct, atol=1e-10)


def test_mc_estimator_contracts():
    th = CanonicalParams([0.0, 0.0], np.eye(2), 0.2)
    mc = hard_contrast_cdf_mc([-1.0, 0.0, 1.5], [0.6, 0.8], th, reps=50_000, seed=1)
    assert np.all(np.abs(mc.value - norm_cdf(np.array([-1.0, 0.0, 1.5]))) <= 4 * mc.se)
    again = hard_contrast_cdf_mc([-1.0, 0.0, 1.5], [0.6, 0.8], th, reps=50_000, seed=1, threads=3)
    assert np.array_equal(mc.value, again.value)
    with pytest.raises(ValueError):
        hard_contrast_cdf_mc([0.0], [1.0, 1.0], th, reps=5000)
    with pytest.raises(ValueError):
        hard_contrast_cdf_mc([0.0], [0.6, 0.8], th, reps=10)


def test_mc_sign_flip_symmetry():
    th = CanonicalParams([1.0, -0.5], [[1.3, 0.2], [0.2, 0.8]], 0.5)
    a = np.array([0.6, 0.8])
    lo = hard_contrast_cdf_mc([-2.0], a, th, reps=200_000, seed=4)
    hi = hard_contrast_cdf_mc([2.0], a, th.flipped(), reps=200_000, seed=5)
    assert abs(lo.value[0] - (1 - hi.value[0])) <= 4 * math.hypot(lo.se[0], hi.se[0])


@given(st.floats(1.0, 3.0), st.floats(-3, 3), st.floats(0.05, 0.95), st.floats(-5, 5))
def test_swap_gives_same_cdf_for_reciprocal_scale(tau, d1, pi1, t):
    th = theta1(tau, d1, pi1)
    if th.in_theta0:
        return
    # exchanging labels describes the same mixture in a different frame
    sw = th.swapped()
    assert np.allclose(sw.swapped().delta1, th.delta1)
    f = hard_cdf_univariate(t, th)
    assert 0.0 <= f <= 1.0


def test_inverse_root_cross_check(gen):
    s = random_spd(gen, 3)
    assert np.allclose(spd_inv_sqrt(s).values @ spd_sqrt(s).values, np.eye(3), atol=1e-10)
