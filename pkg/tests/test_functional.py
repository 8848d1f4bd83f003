import math
from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import integrate

from afmm.datagen import default_templates, gen_functional
from afmm.errors import DataError, DomainError
from afmm.functional import (BsplineBasis, FunctionalChainState, FunctionalData, FunctionalHyperparams,
                             FunctionalModel, FunctionalModelConfig, beta_conditional, build_basis,
                             fit_functional, rw2_penalty, slice_sample_scale, theta_conditional,
                             update_beta, update_tau)
from afmm.rng import RngStream
from oracles import ks_statistic

T101 = np.linspace(0.0, 1.0, 101)


def test_basis_shape_and_partition_of_unity():
    b = BsplineBasis()
    F = b.full_matrix(T101)
    assert F.shape == (101, 11)
    assert b.p == 10 and b.design(T101).shape == (101, 10)
    assert np.allclose(F.sum(axis=1), 1.0, atol=1e-13)
    assert np.all(F >= 0)


@pytest.mark.parametrize("with_intercept", [False, True])
def test_basis_reproduces_cubics(with_intercept):
    b = BsplineBasis()
    X = np.column_stack([np.ones(101), b.design(T101)]) if with_intercept else b.full_matrix(T101)
    y = T101 ** 3 - 2 * T101 + 0.5
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    assert np.max(np.abs(X @ coef - y)) < 1e-8


def test_rw2_penalty_null_space():
    S = rw2_penalty(10)
    ev = np.linalg.eigvalsh(S)
    assert np.sum(np.abs(ev) < 1e-10) == 2
    assert np.allclose(S @ np.ones(10), 0)
    assert np.allclose(S @ np.arange(10.0), 0)
    assert np.allclose(S, S.T)
    with pytest.raises(DomainError):
        rw2_penalty(2)


def test_build_basis_validation():
    with pytest.raises(DomainError):
        build_basis(np.linspace(0, 1, 5))
    with pytest.raises(DomainError):
        build_basis(np.linspace(1, 0, 20))
    with pytest.raises(DomainError):
        BsplineBasis().design([0.5, 1.5])


def small_model(n=4, K=3, seed=0, grid=None):
    rng = RngStream(seed)
    data, _, _ = gen_functional(default_templates(2), n=n, rng=rng, grid=grid)
    cfg = FunctionalModelConfig(U=2, K=K, weight_prior="fixed", alpha1=1.0)
    return FunctionalModel.resolve(data, cfg, FunctionalHyperparams(), RngStream(seed, 1)), data


def random_state(model, seed):
    g = np.random.default_rng(seed)
    n, K, p = model.data.n, model.K, model.p
    return FunctionalChainState(
        beta=g.normal(size=(n, p)), beta0=g.normal(size=n), sigma=g.uniform(0.1, 1.0, n),
        theta=g.normal(size=(K, p)), kappa=g.uniform(0.05, 0.2, K), tau=np.ones(K),
        z=g.integers(0, K, n), log_w=np.log(np.full(K, 1.0 / K)), alpha1=1.0)


def test_beta_conditional_matches_augmented_least_squares():
    grid = np.sort(np.random.default_rng(1).uniform(0, 1, 23))
    model, data = small_model(grid=grid)
    st = random_state(model, 2)
    P, mean = beta_conditional(model, st)
    for i in range(data.n):
        # posterior mean = weighted least squares with the prior as pseudo-observations
        X = np.column_stack([np.ones(grid.size), BsplineBasis().design(data.grids[i])])
        prior_sd = np.r_[10.0, np.full(model.p, st.kappa[st.z[i]])]
        prior_mean = np.r_[0.0, st.theta[st.z[i]]]
        A = np.vstack([X / st.sigma[i], np.diag(1.0 / prior_sd)])
        rhs = np.r_[data.ys[i] / st.sigma[i], prior_mean / prior_sd]
        ref, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        assert np.allclose(mean[i], ref, atol=1e-8, rtol=1e-8)
        assert np.allclose(P[i], A.T @ A, rtol=1e-10)
    b0, b = update_beta(model, st, np.zeros((data.n, model.p + 1)), Counter())
    assert np.allclose(np.column_stack([b0, b]), mean, atol=1e-12)


def test_rw2_shrinkage_monotone_in_tau():
    model, _ = small_model()
    g = np.random.default_rng(3)
    beta = g.normal(size=(4, model.p))
    z = np.zeros(4, dtype=np.int64)
    D = np.diff(np.eye(model.p), n=2, axis=0)
    N = np.column_stack([np.ones(model.p), np.arange(model.p)])
    rough, off_line = [], []
    for tau in (1.0, 0.1, 0.01):
        _, mean = theta_conditional(model, beta, z, np.full(model.K, 0.2), np.full(model.K, tau))
        rough.append(np.sum((D @ mean[0]) ** 2))
        fit, *_ = np.linalg.lstsq(N, mean[0], rcond=None)
        off_line.append(np.linalg.norm(mean[0] - N @ fit))
    assert rough[0] > rough[1] > rough[2]
    assert off_line[0] > off_line[1] > off_line[2]


def _numeric_cdf(logf, lo, hi):
    xs = np.linspace(lo, hi, 20001)
    lf = logf(xs)
    f = np.exp(lf - lf.max())
    c = integrate.cumulative_trapezoid(f, xs, initial=0.0)
    c /= c[-1]
    return lambda v: np.interp(v, xs, c)


@pytest.mark.parametrize("count,ss,hi", [(10, 0.5, 1.0), (3, 0.01, 0.25), (0, 0.0, 0.25), (40, 1e-4, 0.001)])
def test_slice_sampler_targets_density(count, ss, hi):
    lo = 1e-6 * hi
    rng = RngStream(4)
    x = np.full(4000, 0.5 * hi)
    for _ in range(25):
        x = slice_sample_scale(rng, x, count, ss, lo, hi)
    assert np.all((x > lo) & (x < hi))
    cdf = _numeric_cdf(lambda v: -count * np.log(v) - 0.5 * ss / v ** 2, lo, hi)
    assert ks_statistic(x, cdf) < 0.035


@pytest.mark.parametrize("reading", ["sd", "inverse"])
def test_tau_update_targets_density(reading):
    p = 10
    hyper = FunctionalHyperparams(tau_prior_on=reading)
    S = rw2_penalty(p)
    S_ridge = S + 1e-6 * np.trace(S) / p * np.eye(p)
    model = SimpleNamespace(hyper=hyper, p=p, S_ridge=S_ridge)
    theta = np.random.default_rng(5).normal(size=(1, p)) * 0.3
    q = float(theta[0] @ S_ridge @ theta[0])
    K = 3000
    rng = RngStream(6)
    tau = np.ones(K)
    th = np.repeat(theta, K, axis=0)
    for _ in range(300):
        tau, _ = update_tau(model, th, tau, 0.8, rng)

    def logf(t):
        return -p * np.log(t) - 0.5 * q / t ** 2 + np.vectorize(hyper.log_tau_prior)(t)
    cdf = _numeric_cdf(logf, 1e-3, 50.0)
    assert ks_statistic(tau, cdf) < 0.035


def test_noiseless_single_curve_is_reproduced():
    data, _, _ = gen_functional(default_templates(2), n=1, sigma=0.0, rng=RngStream(7))
    cfg = FunctionalModelConfig(U=2, K=5, weight_prior="fixed", alpha1=1.0)
    fit = fit_functional(data, cfg, iters=400, burn=200, thin=2, seed=1)
    hyper = FunctionalHyperparams()
    assert np.max(np.abs(fit.summary.fitted_values - data.ys[0])) < 3 * hyper.A
    # a one-member cluster's mean curve is its member's fitted curve
    assert np.allclose(fit.cluster_means[1], fit.subject_curves[0])
    lo, hi = fit.summary.extras["sigma_range"]
    assert 0 < lo <= hi < hyper.A
    lo, hi = fit.summary.extras["kappa_range"]
    assert 0 < lo <= hi < hyper.A0


def test_identical_curves_form_one_cluster():
    template = default_templates(3)[:1]
    data, _, _ = gen_functional(template, n=12, kappa=0.0, rng=RngStream(8), beta0_sd=0.0)
    cfg = FunctionalModelConfig(U=3, K=10, lam=3.0)
    fit = fit_functional(data, cfg, iters=600, burn=300, thin=1, seed=2)
    assert fit.summary.kplus_mode == 1
    assert fit.summary.n_clusters_point == 1


def test_from_long_rescales_and_sorts():
    ids = ["b", "a", "b", "a", "b", "a"]
    t = [20.0, 15.0, 10.0, 10.0, 15.0, 20.0]
    y = [3.0, 2.0, 1.0, 4.0, 2.5, 6.0]
    d = FunctionalData.from_long(ids, t, y)
    assert d.ids == ["b", "a"]
    assert d.t_offset == 10.0 and d.t_scale == 10.0
    assert np.array_equal(d.grids[0], [0.0, 0.5, 1.0])
    assert np.array_equal(d.ys[0], [1.0, 2.5, 3.0])
    assert np.array_equal(d.ys[1], [4.0, 2.0, 6.0])
    assert np.array_equal(d.shared_grid(), [0.0, 0.5, 1.0])
    i2, t2, y2 = d.to_long()
    assert sorted(zip(i2, t2, y2)) == sorted(zip(ids, t, y))


def test_from_long_rejects_bad_input():
    with pytest.raises(DataError):
        FunctionalData.from_long([1, 1], [0.0, 1.0], [1.0])
    with pytest.raises(DataError):
        FunctionalData.from_long([1, 1], [2.0, 2.0], [1.0, 2.0])
    with pytest.raises(DataError):
        FunctionalData.from_long([1, 1], [0.0, math.nan], [1.0, 2.0])


def test_short_curves_rejected():
    d = FunctionalData.from_long([1] * 5, np.linspace(0, 1, 5), np.zeros(5))
    cfg = FunctionalModelConfig(U=2, K=4, weight_prior="fixed", alpha1=1.0)
    with pytest.raises(DataError):
        FunctionalModel.resolve(d, cfg, FunctionalHyperparams(), RngStream(0))


@pytest.mark.parametrize("kw", [dict(A=0.0), dict(a_tau=1.5), dict(tau_prior_on="var")])
def test_hyperparameter_validation(kw):
    with pytest.raises(DomainError):
        FunctionalHyperparams(**kw)


def test_tau_prior_tail_probability():
    h = FunctionalHyperparams()
    # Pr(tau > U_tau) = a_tau under the exponential reading
    assert math.exp(-h.eta_tau * h.U_tau) == pytest.approx(h.a_tau)
