import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from afmm.errors import CalibrationError, DomainError
from afmm.induced import AsymPc, induced_kplus_prior
from afmm.pc_prior import (PcPriorSpec, alpha1_from_distance, calibrate_lambda, distance,
                           distance_derivative, kld, log_pc_density, sample_alpha1)
from afmm.rng import RngStream
from oracles import dirichlet_kl, dirichlet_kl_mp, monte_carlo_kl

# KL(Dir(1,1,e,e,e) || Dir(2,2,e,e,e)), e = 1e-5, from the 40-digit oracle
FROZEN_KLD_U2_K5 = 0.20825422661475645


def base_vectors(U, K, a1, a2, b1=None, b2=1e-5):
    b1 = U if b1 is None else b1
    return [a1] * U + [a2] * (K - U), [b1] * U + [b2] * (K - U)


def test_kld_zero_at_base():
    for U, K in [(1, 20), (5, 25), (15, 30)]:
        s = PcPriorSpec(U, K)
        assert kld(float(U), 1e-5, s) == 0.0
        assert distance(float(U), s) == 0.0


def test_kld_frozen_hand_setting():
    s = PcPriorSpec(2, 5)
    assert dirichlet_kl_mp(*base_vectors(2, 5, 1.0, 1e-5)) == pytest.approx(FROZEN_KLD_U2_K5, rel=1e-15)
    assert kld(1.0, 1e-5, s) == pytest.approx(FROZEN_KLD_U2_K5, abs=1e-10)
    assert dirichlet_kl(*base_vectors(2, 5, 1.0, 1e-5)) == pytest.approx(FROZEN_KLD_U2_K5, abs=1e-10)


def test_kld_matches_generic_formula_random_settings():
    g = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        U = int(g.integers(1, 15))
        K = int(g.integers(U + 1, 40))
        a1 = float(np.exp(g.uniform(math.log(1e-6), math.log(3 * U))))
        a2 = float(np.exp(g.uniform(math.log(1e-6), 0.0)))
        ref = dirichlet_kl_mp(*base_vectors(U, K, a1, a2))
        worst = max(worst, abs(kld(a1, a2, PcPriorSpec(U, K)) - ref) / abs(ref))
    assert worst <= 1e-9


@pytest.mark.slow
def test_kld_matches_monte_carlo():
    a, b = base_vectors(2, 5, 1.0, 1e-5)
    mean, se = monte_carlo_kl(a, b, 10**6, seed=3)
    assert abs(kld(1.0, 1e-5, PcPriorSpec(2, 5)) - mean) <= 4 * se


def test_kld_vectorised_agrees_with_scalar():
    s = PcPriorSpec(5, 25)
    xs = np.geomspace(1e-8, 5, 50)
    vec = kld(xs, 1e-5, s)
    sca = np.array([kld(float(x), 1e-5, s) for x in xs])
    assert np.allclose(vec, sca, rtol=1e-12, atol=1e-13)


def test_kld_domain_and_floor():
    s = PcPriorSpec(3, 10)
    with pytest.raises(DomainError):
        kld(0.0, 1e-5, s)
    with pytest.raises(DomainError):
        kld(1.0, -1.0, s)
    before = s.counters["kld_floor_clamp"]
    assert kld(1e-12, 1e-5, s) == kld(1e-8, 1e-5, s)
    assert s.counters["kld_floor_clamp"] == before + 1


@given(st.integers(1, 12), st.integers(1, 20), st.floats(1e-7, 50.0), st.floats(1e-7, 5.0))
def test_kld_nonnegative(U, extra, a1, a2):
    s = PcPriorSpec(U, U + extra, grid_size=16)
    v = kld(a1, a2, s)
    assert v >= 0.0
    if v == 0.0:
        assert (a1, a2) == (float(U), 1e-5) or abs(a1 - U) / U < 1e-6


@pytest.mark.parametrize("U", [2, 5, 10, 15])
@pytest.mark.parametrize("K", [20, 25, 30])
def test_grid_strictly_decreasing(U, K):
    s = PcPriorSpec(U, K)
    assert np.all(np.diff(s.d_grid) < 0)
    assert s.d_grid[-1] == 0.0


def test_distance_ordering():
    s = PcPriorSpec(5, 25)
    assert distance(s.alpha1_floor, s) > distance(2.5, s) > 0.0


def richardson(f, x, h):
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    d2 = (f(x + h / 2) - f(x - h / 2)) / h
    return (4 * d2 - d1) / 3


def test_derivative_against_richardson():
    s = PcPriorSpec(5, 25)
    pts = np.geomspace(1e-3, 4.5, 20)
    for a in pts:
        ref = richardson(lambda x: distance(float(x), s), a, 1e-3 * a)
        got = distance_derivative(float(a), s)
        assert got == pytest.approx(ref, rel=1e-5)


def test_derivative_negative_and_finite():
    s = PcPriorSpec(5, 25)
    dd = distance_derivative(s.alpha_grid[1:-1], s)
    assert np.all(dd < 0)
    near_top = distance_derivative(5.0 - 1e-6, s)
    assert np.isfinite(near_top)
    assert np.isfinite(distance_derivative(5.0, s))     # one-sided at the end


def test_derivative_domain():
    s = PcPriorSpec(5, 25)
    with pytest.raises(DomainError):
        distance_derivative(6.0, s)


@pytest.mark.parametrize("lam", [0.05, 0.5, 3.0])
def test_density_normalised(lam):
    s = PcPriorSpec(5, 25, lam)
    lo, hi = math.log(s.alpha1_floor), math.log(5.0)

    def f(u):
        a = min(math.exp(u), 5.0)
        return math.exp(log_pc_density(a, s)) * a

    pts = np.linspace(lo, hi, 30)[1:-1]
    val, _ = integrate.quad(f, lo, hi, points=pts, limit=1000, epsabs=1e-10, epsrel=1e-9)
    assert val == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("U", [1, 2, 5, 10, 15])
@pytest.mark.parametrize("K", [20, 25, 30])
def test_normaliser_equals_exponential_mass(U, K):
    s = PcPriorSpec(U, K, 1.0)
    expected = 1.0 - math.exp(-s.d_floor)
    assert math.exp(s.log_normalizer()) == pytest.approx(expected, abs=1e-6)


def test_density_domain():
    s = PcPriorSpec(5, 25)
    for bad in (0.0, -1.0, 5.5):
        with pytest.raises(DomainError):
            log_pc_density(bad, s)


def test_vector_and_scalar_density_agree():
    s = PcPriorSpec(4, 25, 0.7)
    xs = np.linspace(0.01, 4.0, 40)
    vec = log_pc_density(xs, s)
    assert np.allclose(vec, [log_pc_density(float(x), s) for x in xs], rtol=1e-9, atol=1e-9)


def test_sampler_matches_density_tv():
    s = PcPriorSpec(5, 25, 0.5)
    draws = sample_alpha1(RngStream(30), s, size=10**5)
    edges = np.linspace(0.0, 5.0, 201)
    edges[0] = s.alpha1_floor
    hist = np.histogram(draws, bins=edges)[0] / draws.size
    probs = np.array([integrate.quad(lambda a: math.exp(log_pc_density(a, s)), lo, hi, limit=200)[0]
                      for lo, hi in zip(edges[:-1], edges[1:])])
    assert probs.sum() == pytest.approx(1.0, abs=1e-5)
    assert 0.5 * np.abs(hist - probs).sum() < 0.02


@pytest.mark.parametrize("lam", [0.3, 2.0])
def test_pushforward_is_exponential(lam):
    s = PcPriorSpec(5, 25, lam)
    draws = sample_alpha1(RngStream(31), s, size=10**5)
    d = distance(draws, s)
    assert stats.kstest(d, stats.expon(scale=1 / lam).cdf).statistic < 0.01


def test_inverse_map_accuracy():
    s = PcPriorSpec(5, 25)
    a = np.geomspace(1e-6, 5.0, 300)
    back = alpha1_from_distance(distance(a, s), s)
    assert np.max(np.abs(distance(back, s) - distance(a, s))) <= 1e-8


def test_large_lambda_concentrates_at_U():
    s = PcPriorSpec(5, 25, 1e4)
    draws = sample_alpha1(RngStream(32), s, size=20000)
    assert np.mean((draws >= 0.99 * 5) & (draws <= 5)) >= 0.95


def test_sampler_deterministic():
    s = PcPriorSpec(5, 25, 0.5)
    a = sample_alpha1(RngStream(33), s, size=1000)
    b = sample_alpha1(RngStream(33), s, size=1000)
    assert np.array_equal(a, b)


def test_floor_clamp_counted():
    s = PcPriorSpec(5, 25, 1.0)
    n = s.counters["alpha1_floor_clamp"]
    assert alpha1_from_distance(s.d_floor + 10.0, s) == s.alpha1_floor
    assert s.counters["alpha1_floor_clamp"] == n + 1


def test_spec_validation():
    with pytest.raises(DomainError):
        PcPriorSpec(0, 10)
    with pytest.raises(DomainError):
        PcPriorSpec(10, 10)
    with pytest.raises(DomainError):
        PcPriorSpec(3, 10, lam=0.0)


def test_calibration_deterministic_and_small_tp():
    a = calibrate_lambda(5, 0.01, 25, 100, mc_replicates=5000, rng=RngStream(40, 1))
    b = calibrate_lambda(5, 0.01, 25, 100, mc_replicates=5000, rng=RngStream(40, 1))
    assert a.lambda_star == b.lambda_star
    assert a.history == b.history
    assert abs(a.achieved_tail - 0.01) <= a.tolerance
    res = induced_kplus_prior(AsymPc(PcPriorSpec(5, 25, a.lambda_star)), 100, 20000, RngStream(41))
    assert res.prob(5) > 0.9


def test_calibration_history_monotone():
    r = calibrate_lambda(3, 0.3, 25, 100, mc_replicates=4000, rng=RngStream(42, 1))
    hist = sorted(r.history)
    tails = [p for _, p in hist]
    assert all(x >= y - 1e-12 for x, y in zip(tails, tails[1:]))
    assert r.bracket[0] <= r.lambda_star <= r.bracket[1]


def test_calibration_unreachable():
    with pytest.raises(CalibrationError):
        calibrate_lambda(1, 0.1, 25, 100, mc_replicates=2000, rng=RngStream(43))
    with pytest.raises(DomainError):
        calibrate_lambda(5, 1.5, 25, 100)


@pytest.mark.slow
def test_induced_mode_at_U_for_calibrated_lambda():
    for U in (5, 10, 15):
        cal = calibrate_lambda(U, 0.1, 25, 100, rng=RngStream(44, 1))
        res = induced_kplus_prior(AsymPc(PcPriorSpec(U, 25, cal.lambda_star)), 100, 20000,
                                  RngStream(45))
        assert res.mode == U
