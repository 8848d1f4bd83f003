"""Penalized-complexity prior on the block-1 concentration ``alpha1``.

With ``alpha2`` held fixed, the prior puts an exponential law with rate
``lambda`` on the distance ``d(alpha1) = sqrt(2 KL(p || g))`` between the block
Dirichlet ``p`` and a practical base model ``g`` with concentrations
``(alpha01, alpha02) = (U, 1e-5)``. The density on ``alpha1`` follows by change
of variables; ``lambda`` is chosen so that the induced prior on the number of
occupied components satisfies ``Pr(K+ < U) = tp``.
"""
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import CalibrationError, DomainError, NumericalError
from .rng import RngStream, sample_log_gamma
from .special import digamma, log_gamma

__all__ = [
    "PcPriorSpec", "CalibrationResult", "kld", "distance", "distance_derivative",
    "log_pc_density", "sample_alpha1", "alpha1_from_distance", "calibrate_lambda",
    "tail_probability_crn", "CrnPool",
]

_EPS_CBRT = np.finfo(float).eps ** (1.0 / 3.0)
_D_TOL = 1e-8


class PcPriorSpec:
    """Base model, fixed ``alpha2``, decay rate and a cached distance grid.

    The grid holds ``grid_size`` log-spaced values of ``alpha1`` on
    ``[alpha1_floor, U]`` with their distances; construction fails with
    NumericalError unless the distances strictly decrease along it, since the
    inverse-distance sampler depends on that.
    """

    def __init__(self, U, K, lam=1.0, alpha2_fixed=1e-5, alpha01=None, alpha02=1e-5,
                 alpha1_floor=1e-8, grid_size=2048, _grid=None):
        if int(U) != U or U < 1:
            raise DomainError(f"U must be an integer >= 1, got {U}")
        if int(K) != K or K <= U:
            raise DomainError(f"K must be an integer > U, got K={K}, U={U}")
        if not lam > 0:
            raise DomainError(f"lambda must be positive, got {lam}")
        if not (alpha2_fixed > 0 and alpha02 > 0 and alpha1_floor > 0):
            raise DomainError("concentrations must be positive")
        self.U = int(U)
        self.K = int(K)
        self.lam = float(lam)
        self.alpha2_fixed = float(alpha2_fixed)
        self.alpha01 = float(U if alpha01 is None else alpha01)
        self.alpha02 = float(alpha02)
        self.alpha1_floor = float(alpha1_floor)
        self.counters = Counter()
        self._log_norm = None
        if _grid is None:
            alpha = np.geomspace(self.alpha1_floor, self.U, grid_size)
            alpha[-1] = self.U
            d = distance(alpha, self)
            steps = np.diff(d)
            if not np.all(steps < 0):
                bad = int(np.argmax(steps >= 0))
                raise NumericalError(
                    f"distance is not strictly decreasing on the alpha1 grid near "
                    f"alpha1={alpha[bad]:.6g} (U={self.U}, K={self.K})")
            _grid = (alpha, d)
        self.alpha_grid, self.d_grid = _grid

    def with_lambda(self, lam):
        """Same base model and grid, different decay rate."""
        return PcPriorSpec(self.U, self.K, lam, self.alpha2_fixed, self.alpha01, self.alpha02,
                           self.alpha1_floor, _grid=(self.alpha_grid, self.d_grid))

    @property
    def d_floor(self):
        return float(self.d_grid[0])

    @property
    def d_top(self):
        return float(self.d_grid[-1])

    def log_normalizer(self):
        """Log of the quadrature integral of the unnormalised density over (floor, U]."""
        if self._log_norm is None:
            z = _normalizer(self)
            expected = math.exp(-self.lam * self.d_top) - math.exp(-self.lam * self.d_floor)
            if abs(z - expected) > 1e-3:
                raise NumericalError(
                    f"PC prior normaliser {z:.8f} disagrees with the exponential mass {expected:.8f}")
            self._log_norm = math.log(z)
        return self._log_norm

    def describe(self):
        return {"U": self.U, "K": self.K, "lambda": self.lam, "alpha2_fixed": self.alpha2_fixed,
                "alpha01": self.alpha01, "alpha02": self.alpha02, "alpha1_floor": self.alpha1_floor,
                "grid_size": int(self.alpha_grid.size)}


def kld(alpha1, alpha2, spec, counters=None):
    """KL divergence from the block Dirichlet (alpha1, alpha2) to the base model.

    Vectorised over ``alpha1``. Arguments below ``spec.alpha1_floor`` are
    evaluated at the floor and counted under ``"kld_floor_clamp"``.
    """
    if np.ndim(alpha1) == 0:
        return _kld_scalar(float(alpha1), float(alpha2), spec, counters)
    a1 = np.asarray(alpha1, dtype=float)
    a2 = float(alpha2)
    if np.any(~(a1 > 0)) or not a2 > 0:
        raise DomainError("concentrations must be positive")
    below = a1 < spec.alpha1_floor
    if np.any(below):
        (counters if counters is not None else spec.counters)["kld_floor_clamp"] += int(np.sum(below))
        a1 = np.maximum(a1, spec.alpha1_floor)
    U, K = spec.U, spec.K
    b1, b2 = spec.alpha01, spec.alpha02
    tot = a1 * U + a2 * (K - U)
    tot0 = b1 * U + b2 * (K - U)
    psi_tot = digamma(tot)

    def lg_diff(x, y):
        # log_gamma(x) - log_gamma(y), exactly zero when x == y
        return np.where(x == y, 0.0, log_gamma(x) - log_gamma(y))

    val = (lg_diff(tot, tot0)
           - U * lg_diff(a1, b1) - (K - U) * lg_diff(a2, b2)
           + U * (a1 - b1) * (digamma(a1) - psi_tot)
           + (K - U) * (a2 - b2) * (digamma(a2) - psi_tot))
    if np.any(val < -1e-10):
        raise NumericalError(f"negative KL divergence {np.min(val):.3g}")
    return np.maximum(val, 0.0)


def _kld_scalar(a1, a2, spec, counters):
    # same formula as the array path, in plain floats (this runs once per MH step)
    if not (a1 > 0 and a2 > 0):
        raise DomainError("concentrations must be positive")
    if a1 < spec.alpha1_floor:
        (counters if counters is not None else spec.counters)["kld_floor_clamp"] += 1
        a1 = spec.alpha1_floor
    U, K = spec.U, spec.K
    b1, b2 = spec.alpha01, spec.alpha02
    tot = a1 * U + a2 * (K - U)
    tot0 = b1 * U + b2 * (K - U)
    psi_tot = digamma(tot)

    def lg_diff(x, y):
        return 0.0 if x == y else log_gamma(x) - log_gamma(y)

    val = (lg_diff(tot, tot0)
           - U * lg_diff(a1, b1) - (K - U) * lg_diff(a2, b2)
           + U * (a1 - b1) * (digamma(a1) - psi_tot)
           + (K - U) * (a2 - b2) * (digamma(a2) - psi_tot))
    if val < -1e-10:
        raise NumericalError(f"negative KL divergence {val:.3g}")
    return max(val, 0.0)


def distance(alpha1, spec):
    """sqrt(2 KL) at ``alpha1`` with ``alpha2`` fixed at ``spec.alpha2_fixed``."""
    k = kld(alpha1, spec.alpha2_fixed, spec)
    return math.sqrt(2.0 * k) if np.ndim(k) == 0 else np.sqrt(2.0 * k)


def distance_derivative(alpha1, spec):
    """Finite-difference derivative of :func:`distance` in ``alpha1``.

    Central difference with step max(cbrt(eps) * alpha1, 1e-9), clipped to the
    domain; one-sided at the endpoints.
    """
    lo, hi = spec.alpha1_floor, float(spec.U)
    if np.ndim(alpha1) == 0:
        a = float(alpha1)
        if not lo <= a <= hi:
            raise DomainError("alpha1 outside [alpha1_floor, U]")
        h = max(_EPS_CBRT * a, 1e-9)
        up, down = min(a + h, hi), max(a - h, lo)
        return (distance(up, spec) - distance(down, spec)) / (up - down)
    a = np.asarray(alpha1, dtype=float)
    if np.any(a < lo) or np.any(a > hi):
        raise DomainError("alpha1 outside [alpha1_floor, U]")
    h = np.maximum(_EPS_CBRT * a, 1e-9)
    up = np.minimum(a + h, hi)
    down = np.maximum(a - h, lo)
    same = up == down
    if np.any(same):
        raise DomainError("degenerate domain for the finite difference")
    out = (distance(up, spec) - distance(down, spec)) / (up - down)
    return float(out) if np.ndim(alpha1) == 0 else out


def _unnormalized_log_density(alpha1, spec):
    d = distance(alpha1, spec)
    if np.ndim(d) == 0:
        dd = abs(distance_derivative(alpha1, spec))
        return math.log(spec.lam) - spec.lam * d + (math.log(dd) if dd > 0 else -math.inf)
    dd = distance_derivative(alpha1, spec)
    with np.errstate(divide="ignore"):
        return np.log(spec.lam) - spec.lam * d + np.log(np.abs(dd))


def _normalizer(spec):
    # integrate over u = log(alpha1); the integrand is smooth there
    def f(u):
        a = min(math.exp(u), spec.U)
        return math.exp(_unnormalized_log_density(a, spec)) * a

    lo, hi = math.log(spec.alpha1_floor), math.log(spec.U)
    pts = np.linspace(lo, hi, 9)[1:-1]
    with warnings.catch_warnings():
        # the finite-difference derivative carries ~1e-9 noise; quad notices
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, lo, hi, points=pts, limit=500, epsabs=1e-10, epsrel=1e-9)
    return val


def log_pc_density(alpha1, spec):
    """Log of the normalised PC prior density of ``alpha1`` on (0, U]."""
    if np.ndim(alpha1) == 0:
        a = float(alpha1)
        if not 0 < a <= spec.U:
            raise DomainError("alpha1 must lie in (0, U]")
        return _unnormalized_log_density(max(a, spec.alpha1_floor), spec) - spec.log_normalizer()
    a = np.asarray(alpha1, dtype=float)
    if np.any(~(a > 0)) or np.any(a > spec.U):
        raise DomainError("alpha1 must lie in (0, U]")
    a = np.maximum(a, spec.alpha1_floor)
    out = _unnormalized_log_density(a, spec) - spec.log_normalizer()
    return float(out) if np.ndim(alpha1) == 0 else out


def alpha1_from_distance(dist, spec, counters=None):
    """Invert the distance map: the ``alpha1`` in [floor, U] with d(alpha1) = dist.

    Distances beyond d(floor) return the floor and are counted under
    ``"alpha1_floor_clamp"``. Solved by bisection in log(alpha1) inside the
    bracketing grid cell until |d - dist| <= 1e-8.
    """
    counters = spec.counters if counters is None else counters
    e = np.atleast_1d(np.asarray(dist, dtype=float))
    out = np.empty_like(e)
    dg = spec.d_grid[::-1]          # increasing
    ag = spec.alpha_grid[::-1]
    top = e <= dg[0]
    clamp = e >= dg[-1]
    out[top] = ag[0]
    out[clamp] = ag[-1]
    counters["alpha1_floor_clamp"] += int(np.sum(clamp & ~top))
    work = ~(top | clamp)
    if np.any(work):
        ew = e[work]
        j = np.searchsorted(dg, ew)           # dg[j-1] < e <= dg[j]
        lo = np.log(ag[j])                    # smaller alpha, larger d
        hi = np.log(ag[j - 1])
        mid = 0.5 * (lo + hi)
        active = np.ones(ew.size, dtype=bool)
        for _ in range(200):
            mid_a = mid[active]
            dm = distance(np.exp(mid_a), spec)
            err = dm - ew[active]
            done = np.abs(err) <= _D_TOL
            lo_a, hi_a = lo[active], hi[active]
            # d decreases in alpha: d too big -> move up
            lo_a = np.where(err > 0, mid_a, lo_a)
            hi_a = np.where(err > 0, hi_a, mid_a)
            lo[active], hi[active] = lo_a, hi_a
            new_mid = 0.5 * (lo_a + hi_a)
            stalled = (new_mid == mid_a)
            mid[active] = np.where(done, mid_a, new_mid)
            idx = np.flatnonzero(active)
            active[idx[done | stalled]] = False
            if not active.any():
                break
        out[work] = np.exp(mid)
    out = np.minimum(out, spec.U)
    return float(out[0]) if np.ndim(dist) == 0 else out


def sample_alpha1(rng, spec, size=None):
    """Draw ``alpha1`` by pushing Exp(lambda) distances through the inverse map.

    When the base model is not at distance zero (alpha2_fixed != alpha02) the
    exponential is shifted to start at d(U), which keeps the draws consistent
    with the normalised density.
    """
    e1 = rng.gen.standard_exponential(size=size)
    return alpha1_from_distance(spec.d_top + e1 / spec.lam, spec)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationResult:
    lambda_star: float
    achieved_tail: float
    mc_replicates: int
    seed: int
    bracket: tuple
    iterations: int
    tp: float
    U: int
    K: int
    n: int
    alpha2_fixed: float
    tolerance: float
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "lambda_star": self.lambda_star, "achieved_tail": self.achieved_tail,
            "mc_replicates": self.mc_replicates, "seed": self.seed,
            "bracket": list(self.bracket), "iterations": self.iterations, "tp": self.tp,
            "U": self.U, "K": self.K, "n": self.n, "alpha2_fixed": self.alpha2_fixed,
            "tolerance": self.tolerance,
            "history": [{"lambda": l, "tail": p} for l, p in self.history],
        }


_MT_ATTEMPTS = 6


class CrnPool:
    """Common random numbers for the generative chain alpha1 -> w -> z -> K+.

    Everything that does not depend on ``lambda`` is drawn once: the unit
    exponentials behind ``alpha1``, normal/uniform pairs for Marsaglia-Tsang
    gamma draws in block 1, the block-2 log-gammas and the categorical
    uniforms. Evaluating the tail for a given ``lambda`` is then a
    deterministic function.
    """

    def __init__(self, rng, replicates, U, K, n, alpha2):
        gen = rng.gen
        r = int(replicates)
        self.replicates, self.U, self.K, self.n = r, U, K, n
        self.e1 = gen.standard_exponential(r)
        self.mt_normal = gen.standard_normal((_MT_ATTEMPTS, r, U))
        self.mt_uniform = gen.random((_MT_ATTEMPTS, r, U))
        self.boost_uniform = gen.random((r, U))
        self.fallback_uniform = gen.random((r, U))
        self.log_g2 = sample_log_gamma(rng, alpha2, size=(r, K - U)) if K > U else np.empty((r, 0))
        self.cat_uniform = gen.random((r, n))

    def log_gamma_block1(self, alpha1):
        """Log Gamma(alpha1_r, 1) draws, shape (replicates, U), from the stored numbers."""
        a = np.asarray(alpha1, dtype=float)[:, None] * np.ones((1, self.U))
        small = a < 1.0
        shape = np.where(small, a + 1.0, a)
        d = shape - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.full(a.shape, np.nan)
        pending = np.ones(a.shape, dtype=bool)
        for t in range(_MT_ATTEMPTS):
            z = self.mt_normal[t]
            v = (1.0 + c * z) ** 3
            ok = v > 0
            with np.errstate(invalid="ignore", divide="ignore"):
                logv = np.log(np.where(ok, v, 1.0))
                acc = ok & (np.log(self.mt_uniform[t]) < 0.5 * z * z + d - d * v + d * logv)
            take = pending & acc
            out[take] = np.log(d[take]) + logv[take]
            pending &= ~take
            if not pending.any():
                break
        if pending.any():
            from scipy.special import gammaincinv
            out[pending] = np.log(gammaincinv(shape[pending], self.fallback_uniform[pending]))
        with np.errstate(divide="ignore"):
            out = np.where(small, out + np.log(self.boost_uniform) / np.where(small, a, 1.0), out)
        return out

    def kplus(self, alpha1):
        """Number of occupied components per replicate for the given alpha1 values."""
        lg = np.concatenate([self.log_gamma_block1(alpha1), self.log_g2], axis=1)
        return kplus_from_log_weights(lg, self.cat_uniform)


def kplus_from_log_weights(log_w, uniforms):
    """Occupied-component counts given unnormalised log-weights (R, K) and uniforms (R, n).

    Allocation i of replicate r is the inverse-CDF category of ``uniforms[r, i]``.
    """
    r, k = log_w.shape
    w = np.exp(log_w - log_w.max(axis=1, keepdims=True))
    cw = np.cumsum(w, axis=1)
    cw /= cw[:, -1:]
    cw[:, -1] = 1.0
    offset = np.arange(r, dtype=float)[:, None]
    flat = (cw + 2.0 * offset).ravel()
    z = np.searchsorted(flat, (uniforms + 2.0 * offset).ravel(), side="right")
    z = np.minimum(z.reshape(uniforms.shape) - k * np.arange(r)[:, None], k - 1)
    occupied = np.zeros((r, k), dtype=bool)
    occupied[np.arange(r)[:, None], z] = True
    return occupied.sum(axis=1)


def tail_probability_crn(lam, base_spec, pool):
    """Monte Carlo Pr(K+ < U) for decay rate ``lam`` using the stored pool."""
    spec = base_spec.with_lambda(lam)
    alpha1 = alpha1_from_distance(spec.d_top + pool.e1 / lam, spec, counters=Counter())
    kp = pool.kplus(alpha1)
    return float(np.mean(kp < pool.U))


def calibrate_lambda(U, tp, K, n, alpha2_fixed=1e-5, mc_replicates=20000, tolerance=0.02,
                     rng=None, seed=0, lam_min=1e-6, lam_max=1e6, max_iter=80):
    """Find the decay rate whose induced prior gives Pr(K+ < U) = tp.

    The tail estimate is computed on a fixed pool of common random numbers, so
    it is a deterministic, (essentially) nonincreasing function of lambda.
    The root is bracketed by doubling/halving from lambda = 1 and refined by
    bisection on log(lambda) until the pool estimate is within tolerance / 10
    of tp (or the bracket collapses).
    """
    if not 0.0 < tp < 1.0:
        raise DomainError(f"tp must lie in (0, 1), got {tp}")
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if rng is None:
        rng = RngStream(seed)
    base = PcPriorSpec(U, K, 1.0, alpha2_fixed=alpha2_fixed)
    pool = CrnPool(rng, mc_replicates, base.U, base.K, int(n), alpha2_fixed)
    history = []

    def tail(lam):
        p = tail_probability_crn(lam, base, pool)
        history.append((lam, p))
        return p

    lam = 1.0
    p = tail(lam)
    if p > tp:
        lo, p_lo = lam, p
        while True:
            lam *= 2.0
            if lam > lam_max:
                raise CalibrationError(
                    f"tp={tp} unreachable: tail is {tail(lam_max):.4f} at lambda={lam_max:g}",
                    achievable=(tail(lam_max), tail(lam_min)))
            p = tail(lam)
            if p <= tp:
                hi, p_hi = lam, p
                break
            lo, p_lo = lam, p
    else:
        hi, p_hi = lam, p
        while True:
            lam /= 2.0
            if lam < lam_min:
                raise CalibrationError(
                    f"tp={tp} unreachable: tail is {tail(lam_min):.4f} at lambda={lam_min:g}",
                    achievable=(tail(lam_max), tail(lam_min)))
            p = tail(lam)
            if p >= tp:
                lo, p_lo = lam, p
                break
            hi, p_hi = lam, p
    bracket = (lo, hi)
    target = tolerance / 10.0
    it = 0
    while it < max_iter:
        it += 1
        if abs(p_lo - tp) <= target or abs(p_hi - tp) <= target:
            break
        if hi / lo - 1.0 < 1e-12:
            break
        mid = math.sqrt(lo * hi)
        p_mid = tail(mid)
        if p_mid > tp:
            lo, p_lo = mid, p_mid
        else:
            hi, p_hi = mid, p_mid
    lam_star, p_star = min(history, key=lambda lp: (abs(lp[1] - tp), lp[0]))
    if abs(p_star - tp) > tolerance:
        raise CalibrationError(
            f"calibration stalled at lambda={lam_star:.6g} with tail {p_star:.4f} (tp={tp})",
            achievable=(p_hi, p_lo))
    return CalibrationResult(
        lambda_star=float(lam_star), achieved_tail=float(p_star), mc_replicates=int(mc_replicates),
        seed=int(rng.seed), bracket=bracket, iterations=it, tp=float(tp), U=base.U, K=base.K,
        n=int(n), alpha2_fixed=float(alpha2_fixed), tolerance=float(tolerance), history=history)
