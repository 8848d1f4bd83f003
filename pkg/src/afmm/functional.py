"""Functional clustering with a block Dirichlet mixture on B-spline coefficients.

Each subject i is observed on its own grid::

    y_i(t)   = beta0_i + B(t) beta_i + eps,   eps ~ N(0, sigma_i^2),  sigma_i ~ U(0, A)
    beta_i   ~ sum_k w_k N(theta_k, kappa_k^2 I),                     kappa_k ~ U(0, A0)
    theta_k  ~ N(0, tau_k^2 (S + eps I)^{-1})                         (RW2 smoothing)
    tau_k    ~ Exp(eta) on the standard deviation (or on 1 / tau_k)
    beta0_i  ~ N(0, beta0_var)

with the weights and their concentration prior shared with the univariate
sampler. Times are rescaled to [0, 1]; cubic B-splines on evenly spaced
interior knots with the first column dropped (it is absorbed by beta0_i).
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.interpolate import BSpline

from .errors import DataError, DomainError
from .gibbs import (AlphaUpdater, PosteriorAccumulator, WeightPriorConfig, block_swap_log_ratio,
                    resolve_alpha_prior, retained_sweeps, sample_weights)
from .rng import RngStream, sample_categorical_log_rows

log = logging.getLogger(__name__)

__all__ = [
    "BsplineBasis", "build_basis", "rw2_penalty", "FunctionalHyperparams", "FunctionalData",
    "FunctionalModelConfig", "FunctionalChainState", "FunctionalModel", "beta_conditional",
    "theta_conditional", "slice_sample_scale", "functional_gibbs_step", "fit_functional",
    "initial_functional_state",
]

_LOG_2PI = math.log(2.0 * math.pi)
SCALE_FLOOR_FRACTION = 1e-6   # slice intervals start at this fraction of the bound


# ---------------------------------------------------------------------------
# basis and penalty


@dataclass(frozen=True)
class BsplineBasis:
    degree: int = 3
    interior_knots: int = 7

    def __post_init__(self):
        if self.degree < 1 or self.interior_knots < 0:
            raise DomainError("need degree >= 1 and interior_knots >= 0")

    @property
    def knots(self):
        inner = np.linspace(0.0, 1.0, self.interior_knots + 2)
        return np.r_[np.zeros(self.degree), inner, np.ones(self.degree)]

    @property
    def n_full(self):
        return self.interior_knots + self.degree + 1

    @property
    def p(self):
        return self.n_full - 1

    def full_matrix(self, t):
        """Pre-drop basis; rows sum to one."""
        t = np.asarray(t, dtype=float)
        if t.ndim != 1 or np.any(t < 0) or np.any(t > 1):
            raise DomainError("basis points must be a vector within [0, 1]")
        return BSpline.design_matrix(t, self.knots, self.degree).toarray()

    def design(self, t):
        return self.full_matrix(t)[:, 1:]

    def greville(self):
        """Greville abscissae of the retained columns (knot averages)."""
        kn, d = self.knots, self.degree
        g = np.array([kn[j + 1:j + d + 1].mean() for j in range(self.n_full)])
        return g[1:]


def build_basis(grid, degree=3, interior_knots=7):
    """Basis object and the m x p design matrix on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    basis = BsplineBasis(degree, interior_knots)
    if np.any(np.diff(grid) < 0):
        raise DomainError("grid must be sorted")
    if grid.size < basis.p:
        raise DomainError(f"need at least p={basis.p} grid points, got {grid.size}")
    return basis, basis.design(grid)


def rw2_penalty(p):
    """Second-order random-walk penalty D'D, rank p - 2."""
    if p < 3:
        raise DomainError("the RW2 penalty needs p >= 3")
    D = np.diff(np.eye(p), n=2, axis=0)
    return D.T @ D


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class FunctionalHyperparams:
    A: float = 0.001            # bound on the noise SD
    A0: float = 0.25            # bound on the within-cluster coefficient SD
    a_tau: float = 0.01
    U_tau: float = 3.22
    beta0_var: float = 100.0
    tau_prior_on: str = "sd"    # "sd": tau ~ Exp(eta); "inverse": 1/tau ~ Exp(eta)

    def __post_init__(self):
        if not (self.A > 0 and self.A0 > 0 and self.U_tau > 0 and self.beta0_var > 0):
            raise DomainError("A, A0, U_tau and beta0_var must be positive")
        if not 0 < self.a_tau < 1:
            raise DomainError("a_tau must lie in (0, 1)")
        if self.tau_prior_on not in ("sd", "inverse"):
            raise DomainError("tau_prior_on must be 'sd' or 'inverse'")

    @property
    def eta_tau(self):
        return -math.log(self.a_tau) / self.U_tau

    def log_tau_prior(self, tau):
        eta = self.eta_tau
        if self.tau_prior_on == "sd":
            return math.log(eta) - eta * tau
        return math.log(eta) - eta / tau - 2.0 * math.log(tau)


@dataclass
class FunctionalModelConfig(WeightPriorConfig):
    degree: int = 3
    interior_knots: int = 7
    tau_step: float = 0.5
    tau_fixed: Optional[float] = None
    init_tau: float = 1.0


@dataclass
class FunctionalData:
    """Curves on [0, 1]; ``t_offset`` and ``t_scale`` map back to input time."""
    ids: list
    grids: list
    ys: list
    t_offset: float = 0.0
    t_scale: float = 1.0

    @classmethod
    def from_long(cls, ids, t, y):
        ids = np.asarray(ids)
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if not (ids.shape == t.shape == y.shape) or t.ndim != 1:
            raise DataError("id, t and y must be equal-length vectors")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DataError("non-finite t or y")
        lo, hi = float(t.min()), float(t.max())
        if hi <= lo:
            raise DataError("t must span a non-empty interval")
        scale = hi - lo
        uniq, first = np.unique(ids, return_index=True)
        order = uniq[np.argsort(first)]
        grids, ys = [], []
        for sid in order:
            sel = ids == sid
            ti, yi = (t[sel] - lo) / scale, y[sel]
            o = np.argsort(ti, kind="stable")
            grids.append(np.clip(ti[o], 0.0, 1.0))
            ys.append(yi[o])
        return cls(list(order), grids, ys, lo, scale)

    @property
    def n(self):
        return len(self.ys)

    def shared_grid(self):
        g0 = self.grids[0]
        if all(g.shape == g0.shape and np.array_equal(g, g0) for g in self.grids):
            return g0
        return None

    def to_long(self):
        ids = np.concatenate([[sid] * g.size for sid, g in zip(self.ids, self.grids)])
        t = self.t_offset + self.t_scale * np.concatenate(self.grids)
        return ids, t, np.concatenate(self.ys)


@dataclass
class FunctionalChainState:
    beta: np.ndarray      # (n, p)
    beta0: np.ndarray     # (n,)
    sigma: np.ndarray     # (n,)
    theta: np.ndarray     # (K, p)
    kappa: np.ndarray     # (K,)
    tau: np.ndarray       # (K,)
    z: np.ndarray         # (n,) 0-based
    log_w: np.ndarray     # (K,)
    alpha1: float

    def copy(self):
        return FunctionalChainState(self.beta.copy(), self.beta0.copy(), self.sigma.copy(),
                                    self.theta.copy(), self.kappa.copy(), self.tau.copy(),
                                    self.z.copy(), self.log_w.copy(), self.alpha1)

    @property
    def kplus(self):
        return int(np.unique(self.z).size)


class FunctionalModel:
    """Data-dependent pieces: padded design arrays, penalty and the weight prior."""

    def __init__(self, data, config, hyper, prior, params, calibration=None):
        self.data, self.config, self.hyper = data, config, hyper
        self.prior, self.params, self.calibration = prior, params, calibration
        self.basis = BsplineBasis(config.degree, config.interior_knots)
        p = self.basis.p
        self.p = p
        self.S = rw2_penalty(p)
        self.ridge = 1e-6 * np.trace(self.S) / p
        self.S_ridge = self.S + self.ridge * np.eye(p)
        n = data.n
        sizes = np.array([g.size for g in data.grids])
        if np.any(sizes < p + 1):
            raise DataError(f"every curve needs at least {p + 1} points")
        m = int(sizes.max())
        self.sizes = sizes
        self.X = np.zeros((n, m, p + 1))     # [1, B] rows; padding rows are zero
        self.Y = np.zeros((n, m))
        for i, (g, y) in enumerate(zip(data.grids, data.ys)):
            self.X[i, :g.size, 0] = 1.0
            self.X[i, :g.size, 1:] = self.basis.design(g)
            self.Y[i, :g.size] = y
        self.XtX = np.einsum("nmi,nmj->nij", self.X, self.X)
        self.Xty = np.einsum("nmi,nm->ni", self.X, self.Y)

    @property
    def K(self):
        return self.params.K

    @classmethod
    def resolve(cls, data, config, hyper, rng):
        config.validate()
        prior, params, calib = resolve_alpha_prior(config, data.n, rng)
        return cls(data, config, hyper, prior, params, calib)

    def residual_ss(self, beta0, beta):
        coef = np.concatenate([beta0[:, None], beta], axis=1)
        r = self.Y - np.einsum("nmj,nj->nm", self.X, coef)
        return np.einsum("nm,nm->n", r, r)


# ---------------------------------------------------------------------------
# conditional updates


def _batched_cholesky(P, counters, ridge):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        counters["ridge_retry"] += 1
        eye = np.eye(P.shape[-1])
        return np.linalg.cholesky(P + 10.0 * ridge * np.trace(P, axis1=-2, axis2=-1)[:, None, None] * eye)


def beta_conditional(model, state):
    """Precision matrices and means of (beta0_i, beta_i) given everything else."""
    p = model.p
    kap2 = state.kappa[state.z] ** 2
    s2 = state.sigma ** 2
    P = model.XtX / s2[:, None, None]
    diag = np.empty((model.data.n, p + 1))
    diag[:, 0] = 1.0 / model.hyper.beta0_var
    diag[:, 1:] = (1.0 / kap2)[:, None]
    P[:, np.arange(p + 1), np.arange(p + 1)] += diag
    b = model.Xty / s2[:, None]
    b[:, 1:] += state.theta[state.z] / kap2[:, None]
    return P, np.linalg.solve(P, b[..., None])[..., 0]


def update_beta(model, state, xi, counters):
    """Joint Gaussian draw of all (beta0_i, beta_i); ``xi`` are standard normals (n, p+1)."""
    P, mean = beta_conditional(model, state)
    L = _batched_cholesky(P, counters, model.ridge)
    draw = mean + np.linalg.solve(np.swapaxes(L, -1, -2), xi[..., None])[..., 0]
    return draw[:, 0].copy(), draw[:, 1:].copy()


def theta_conditional(model, beta, z, kappa, tau):
    """Precisions and means of the cluster coefficient vectors."""
    K, p = model.K, model.p
    counts = np.bincount(z, minlength=K)
    sums = np.zeros((K, p))
    np.add.at(sums, z, beta)
    P = model.S_ridge[None] / (tau ** 2)[:, None, None]
    P = P + (counts / kappa ** 2)[:, None, None] * np.eye(p)[None]
    b = sums / (kappa ** 2)[:, None]
    return P, np.linalg.solve(P, b[..., None])[..., 0]


def update_theta(model, beta, z, kappa, tau, rng, counters):
    P, mean = theta_conditional(model, beta, z, kappa, tau)
    L = _batched_cholesky(P, counters, model.ridge)
    xi = rng.gen.standard_normal(mean.shape)
    return mean + np.linalg.solve(np.swapaxes(L, -1, -2), xi[..., None])[..., 0]


def slice_sample_scale(rng, x0, count, ss, lo, hi, max_steps=200, counters=None):
    """Slice sampling of scales with log density -count log x - ss / (2 x^2) on (lo, hi).

    Vectorised over independent coordinates. The slice is bracketed by the
    whole support and shrunk toward the current point. Coordinates that fail
    to accept within ``max_steps`` keep their value and are counted.
    """
    x0 = np.asarray(x0, dtype=float)
    count = np.broadcast_to(np.asarray(count, dtype=float), x0.shape)
    ss = np.broadcast_to(np.asarray(ss, dtype=float), x0.shape)

    def logf(x, c, s):
        return -c * np.log(x) - 0.5 * s / (x * x)

    level = logf(x0, count, ss) - rng.gen.standard_exponential(x0.shape)
    left = np.full(x0.shape, float(lo))
    right = np.full(x0.shape, float(hi))
    out = x0.copy()
    todo = np.arange(x0.size)
    for _ in range(max_steps):
        if todo.size == 0:
            break
        cand = left[todo] + (right[todo] - left[todo]) * rng.gen.random(todo.size)
        ok = logf(cand, count[todo], ss[todo]) > level[todo]
        out[todo[ok]] = cand[ok]
        miss = todo[~ok]
        c_miss = cand[~ok]
        below = c_miss < x0[miss]
        left[miss[below]] = c_miss[below]
        right[miss[~below]] = c_miss[~below]
        todo = miss
    if todo.size and counters is not None:
        counters["slice_exhausted"] += int(todo.size)
    return out


def update_tau(model, theta, tau, steps, rng):
    """Random-walk MH on log tau_k, one proposal per component."""
    hyper, p = model.hyper, model.p
    q = np.einsum("ki,ij,kj->k", theta, model.S_ridge, theta)
    new = tau * np.exp(steps * rng.gen.standard_normal(tau.shape))
    u = np.log(rng.gen.random(tau.shape))
    out = tau.copy()
    accepted = 0
    for k in range(tau.size):
        def target(t):
            return -p * math.log(t) - 0.5 * q[k] / (t * t) + hyper.log_tau_prior(t) + math.log(t)
        if u[k] < target(new[k]) - target(tau[k]):
            out[k] = new[k]
            accepted += 1
    return out, accepted


def allocation_log_probs(beta, log_w, theta, kappa):
    p = beta.shape[1]
    d2 = ((beta[:, None, :] - theta[None, :, :]) ** 2).sum(axis=2)
    return (log_w[None, :] - p * np.log(kappa)[None, :] - 0.5 * p * _LOG_2PI
            - 0.5 * d2 / (kappa ** 2)[None, :])


def functional_gibbs_step(state, model, updater, rng, counters, tau_stats=None):
    """One sweep over (beta0, beta), z, w, theta, tau, sigma, kappa and alpha1."""
    hyper, K, p = model.hyper, model.K, model.p
    s = state
    xi = rng.gen.standard_normal((model.data.n, p + 1))
    beta0, beta = update_beta(model, s, xi, counters)
    z = sample_categorical_log_rows(rng, allocation_log_probs(beta, s.log_w, s.theta, s.kappa))
    counts = np.bincount(z, minlength=K)
    log_w = sample_weights(counts, model.params.with_alpha1(s.alpha1), rng)
    theta = update_theta(model, beta, z, s.kappa, s.tau, rng, counters)
    if model.config.tau_fixed is None:
        tau, acc = update_tau(model, theta, s.tau, model.config.tau_step, rng)
        if tau_stats is not None:
            tau_stats["proposed"] += K
            tau_stats["accepted"] += acc
    else:
        tau = s.tau
    rss = model.residual_ss(beta0, beta)
    sigma = slice_sample_scale(rng, s.sigma, model.sizes, rss,
                               SCALE_FLOOR_FRACTION * hyper.A, hyper.A, counters=counters)
    ssk = np.zeros(K)
    np.add.at(ssk, z, ((beta - theta[z]) ** 2).sum(axis=1))
    kappa = slice_sample_scale(rng, s.kappa, p * counts, ssk,
                               SCALE_FLOOR_FRACTION * hyper.A0, hyper.A0, counters=counters)
    alpha1 = updater.update(s.alpha1, log_w, rng)
    return FunctionalChainState(beta, beta0, sigma, theta, kappa, tau, z, log_w, alpha1)


def functional_block_swap(state, params, rng, stats=None):
    """Exchange a block-1 and a block-2 component (theta, kappa, tau, weight, members)."""
    U, K = params.U, params.K
    if U == 0 or U == K:
        return state
    j = int(rng.gen.integers(0, U))
    k = int(rng.gen.integers(U, K))
    lr = block_swap_log_ratio(state.log_w, j, k, state.alpha1, params.alpha2)
    if stats is not None:
        stats["swap_proposed"] += 1
    if lr >= 0 or math.log(rng.gen.random()) < lr:
        new = state.copy()
        for arr in (new.log_w, new.theta, new.kappa, new.tau):
            arr[[j, k]] = arr[[k, j]]
        new.z[state.z == j] = k
        new.z[state.z == k] = j
        if stats is not None:
            stats["swap_accepted"] += 1
        return new
    return state


# ---------------------------------------------------------------------------
# initialisation and driver


def _least_squares_coefs(model):
    p1 = model.p + 1
    jitter = 1e-10 * np.trace(model.XtX, axis1=1, axis2=2)[:, None, None] * np.eye(p1)
    return np.linalg.solve(model.XtX + jitter, model.Xty[..., None])[..., 0]


def _kmeans_until_tight(beta, limit, K, rng):
    """Smallest k whose k-means clusters all have per-coefficient RMS <= limit."""
    n = beta.shape[0]
    for k in range(1, min(K, n) + 1):
        if k == 1:
            labels = np.zeros(n, dtype=np.int64)
            centers = beta.mean(axis=0, keepdims=True)
        else:
            centers, labels = kmeans2(beta, k, minit="++", seed=rng.gen)
        rms = np.array([np.sqrt(np.mean((beta[labels == c] - centers[c]) ** 2))
                        if np.any(labels == c) else 0.0 for c in range(k)])
        if np.all(rms <= limit):
            return labels, centers, rms
    return labels, centers, rms


def initial_functional_state(model, rng):
    """Least-squares fits per curve, then k-means on the coefficients.

    The number of starting clusters is the smallest k for which every
    cluster's per-coefficient RMS is at most A0 / 2; the largest cluster takes
    label 0, the next label 1 and so on.
    """
    hyper, K, p = model.hyper, model.K, model.p
    coef = _least_squares_coefs(model)
    beta0, beta = coef[:, 0], coef[:, 1:]
    labels, centers, rms = _kmeans_until_tight(beta, 0.5 * hyper.A0, K, rng)
    used = np.unique(labels)
    order = used[np.argsort(-np.bincount(labels)[used], kind="stable")]
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[order] = np.arange(order.size)
    z = remap[labels]
    tau = np.full(K, model.config.tau_fixed or model.config.init_tau)
    theta = np.empty((K, p))
    kappa = np.empty(K)
    theta[:order.size] = centers[order]
    kappa[:order.size] = np.clip(rms[order], 0.02 * hyper.A0, 0.98 * hyper.A0)
    n_empty = K - order.size
    if n_empty:
        L = np.linalg.cholesky(model.S_ridge)
        xi = rng.gen.standard_normal((n_empty, p))
        theta[order.size:] = tau[order.size:, None] * np.linalg.solve(L.T, xi.T).T
        kappa[order.size:] = hyper.A0 * rng.gen.random(n_empty)
    rss = model.residual_ss(beta0, beta)
    sigma = np.clip(np.sqrt(rss / model.sizes), 0.02 * hyper.A, 0.98 * hyper.A)
    alpha1 = model.prior.initial()
    log_w = sample_weights(np.bincount(z, minlength=K), model.params.with_alpha1(alpha1), rng)
    return FunctionalChainState(beta, beta0, sigma, theta, kappa, tau, z, log_w, alpha1)


@dataclass
class FunctionalFit:
    summary: object
    coef_mean: np.ndarray           # (n, p+1) posterior mean of (beta0_i, beta_i)
    eval_grid: np.ndarray           # rescaled [0, 1]
    subject_curves: np.ndarray      # (n, len(eval_grid)) posterior mean curves
    cluster_means: dict             # label -> mean curve on eval_grid
    model: object = None
    extras: dict = field(default_factory=dict)

    def time_grid(self):
        d = self.model.data
        return d.t_offset + d.t_scale * self.eval_grid


def fit_functional(data, config, hyper=None, iters=20000, burn=10000, thin=10, seed=0):
    """Run one functional chain; returns a FunctionalFit wrapping the posterior summary."""
    hyper = hyper or FunctionalHyperparams()
    n_keep = retained_sweeps(iters, burn, thin)
    if n_keep < 50:
        log.warning("only %d retained draws", n_keep)
    model = FunctionalModel.resolve(data, config, hyper, RngStream(seed, 1))
    rng = RngStream(seed, 0)
    counters = Counter()
    tau_stats = Counter()
    updater = AlphaUpdater(model.prior, model.params, step=config.mh_step)
    state = initial_functional_state(model, rng)
    acc = PosteriorAccumulator(data.n, model.K)
    coef_sum = np.zeros((data.n, model.p + 1))
    alpha_trace = np.empty(n_keep)
    kplus_trace = np.empty(n_keep, dtype=np.int64)
    sig_lo, sig_hi = math.inf, -math.inf
    kap_lo, kap_hi = math.inf, -math.inf
    keep = 0
    if burn == 0:
        updater.freeze()
    for s in range(1, iters + 1):
        state = functional_gibbs_step(state, model, updater, rng, counters, tau_stats)
        if config.block_swap:
            state = functional_block_swap(state, model.params.with_alpha1(state.alpha1), rng, counters)
        if s == burn:
            updater.freeze()
        if s > burn and (s - burn) % thin == 0:
            acc.add(state.z)
            coef_sum[:, 0] += state.beta0
            coef_sum[:, 1:] += state.beta
            alpha_trace[keep] = state.alpha1
            kplus_trace[keep] = state.kplus
            sig_lo, sig_hi = min(sig_lo, state.sigma.min()), max(sig_hi, state.sigma.max())
            kap_lo, kap_hi = min(kap_lo, state.kappa.min()), max(kap_hi, state.kappa.max())
            keep += 1
    coef_mean = coef_sum / n_keep
    fitted = np.concatenate([model.X[i, :g.size] @ coef_mean[i] for i, g in enumerate(data.grids)])
    acceptance = {
        "alpha1_acceptance": updater.acceptance_rate,
        "alpha1_step": updater.step,
        "tau_acceptance": (tau_stats["accepted"] / tau_stats["proposed"]
                           if tau_stats["proposed"] else float("nan")),
        "swap_acceptance": (counters["swap_accepted"] / counters["swap_proposed"]
                            if counters["swap_proposed"] else float("nan")),
    }
    summary = acc.summary(fitted_values=fitted, alpha1_trace=alpha_trace, kplus_trace=kplus_trace,
                          acceptance=acceptance, counters=dict(counters),
                          extras={"sigma_range": (sig_lo, sig_hi), "kappa_range": (kap_lo, kap_hi),
                                  "final_state": state})
    grid = data.shared_grid()
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    Xe = np.column_stack([np.ones(grid.size), model.basis.design(grid)])
    curves = coef_mean @ Xe.T
    point = summary.point_partition
    means = {int(c): curves[point == c].mean(axis=0) for c in np.unique(point)}
    return FunctionalFit(summary=summary, coef_mean=coef_mean, eval_grid=grid,
                         subject_curves=curves, cluster_means=means, model=model)
