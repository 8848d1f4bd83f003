"""Gibbs sampler for the univariate Gaussian mixture with a block Dirichlet prior.

Model::

    y_i | z_i        ~ N(mu_{z_i}, sigma2_{z_i})
    Pr(z_i = k | w)  = w_k
    mu_k             ~ N(mu0, sigma0_sq)
    sigma2_k         ~ Inverse-Gamma(a0, b0)          (prior mean b0 / (a0 - 1))
    w                ~ Dirichlet(alpha1 * 1_U, alpha2 * 1_{K-U})
    alpha1           ~ PC prior | Gamma | fixed

Allocations, weights, means and variances are drawn from their full
conditionals; ``alpha1`` gets a random-walk Metropolis step. A label-swap move
between the two weight blocks improves mixing.

Internally component labels are 0-based; everything written out is 1-based.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import asym_dirichlet
from .asym_dirichlet import AsymDirichletParams
from .errors import DomainError
from .metrics import binder_point_partition, canonical_labels
from .pc_prior import PcPriorSpec, calibrate_lambda, log_pc_density
from .rng import GammaParams, RngStream, sample_categorical_log_rows, sample_dirichlet_log

log = logging.getLogger(__name__)

__all__ = [
    "WeightPriorConfig", "UnivariateModelConfig", "UnivariateChainState", "PosteriorSummary", "PcAlpha",
    "GammaAlpha", "FixedAlpha", "AlphaUpdater", "ResolvedModel", "resolve_model",
    "resolve_alpha_prior", "block_swap_log_ratio", "initial_state", "gibbs_step", "optional_block_swap_move", "run_chain",
    "sample_weights", "update_mu", "update_sigma_sq", "PosteriorAccumulator",
]

VARIANCE_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# priors on the concentration


@dataclass(frozen=True)
class PcAlpha:
    spec: PcPriorSpec

    upper = property(lambda self: float(self.spec.U))

    def log_prior(self, alpha):
        return log_pc_density(alpha, self.spec)

    def initial(self):
        return 0.5 * self.spec.U


@dataclass(frozen=True)
class GammaAlpha:
    params: GammaParams
    upper = None

    def log_prior(self, alpha):
        return float(self.params.log_density(alpha))

    def initial(self):
        return self.params.mean


@dataclass(frozen=True)
class FixedAlpha:
    value: float
    upper = None

    def initial(self):
        return self.value


class AlphaUpdater:
    """Random-walk Metropolis for the block-1 concentration given the weights.

    Bounded priors (the PC prior lives on (0, U]) are sampled on the logit
    scale of alpha / U, unbounded ones on the log scale. The proposal scale is
    adapted toward an acceptance rate in [0.2, 0.5] only while ``adapting``.
    """

    def __init__(self, prior, params, step=1.0):
        self.prior = prior
        self.params = params
        self.step = float(step)
        self.adapting = True
        self.accepted = 0
        self.proposed = 0
        self._window_acc = 0
        self._window_n = 0
        self._cached = (None, None)

    @property
    def fixed(self):
        return isinstance(self.prior, FixedAlpha)

    def _to_t(self, a):
        up = self.prior.upper
        if up is None:
            return math.log(a)
        return math.log(a) - math.log(up - a) if a < up else 40.0

    def _from_t(self, t):
        up = self.prior.upper
        if up is None:
            return math.exp(t)
        return up / (1.0 + math.exp(-t)) if t > -700 else 0.0

    def _log_jacobian(self, a):
        up = self.prior.upper
        if up is None:
            return math.log(a)
        rest = up - a
        if rest <= 0:
            return -math.inf
        return math.log(a) + math.log(rest) - math.log(up)

    def log_prior(self, alpha):
        # the current value is re-evaluated every sweep, so remember the last one
        if alpha != self._cached[0]:
            self._cached = (alpha, self.prior.log_prior(alpha))
        return self._cached[1]

    def log_target(self, alpha, log_w):
        p = self.params.with_alpha1(alpha)
        return asym_dirichlet.log_density(p, log_w, check=False) + self.log_prior(alpha)

    def update(self, alpha, log_w, rng):
        if self.fixed:
            return alpha
        t = self._to_t(alpha)
        t_new = t + self.step * rng.gen.standard_normal()
        a_new = self._from_t(t_new)
        self.proposed += 1
        self._window_n += 1
        accept = False
        if a_new > 0 and math.isfinite(a_new) and (self.prior.upper is None or a_new <= self.prior.upper):
            cur = self.log_target(alpha, log_w) + self._log_jacobian(alpha)
            new = self.log_target(a_new, log_w) + self._log_jacobian(a_new)
            if math.isfinite(new) and math.log(rng.gen.random()) < new - cur:
                accept = True
        if accept:
            self.accepted += 1
            self._window_acc += 1
            alpha = a_new
        if self.adapting and self._window_n >= 50:
            rate = self._window_acc / self._window_n
            if rate < 0.2:
                self.step *= 0.8
            elif rate > 0.5:
                self.step *= 1.25
            self._window_acc = self._window_n = 0
        return alpha

    def freeze(self):
        self.adapting = False
        self.accepted = self.proposed = 0

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else float("nan")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class WeightPriorConfig:
    """Block layout of the weights and the prior on the block-1 concentration."""
    U: int
    K: int = 25
    weight_prior: str = "pc"          # pc | gamma | fixed | sym-gamma
    tp: float = 0.1
    lam: Optional[float] = None       # skip calibration when given
    alpha1: Optional[float] = None    # value for weight_prior="fixed"
    gamma_a: float = 10.0
    gamma_rate: Optional[float] = None  # default 1/(10U) for gamma, 10K for sym-gamma
    alpha2: float = 1e-5
    mh_step: float = 1.0
    block_swap: bool = True
    calib_replicates: int = 20000
    calib_tolerance: float = 0.02

    def validate(self):
        if self.weight_prior not in ("pc", "gamma", "fixed", "sym-gamma"):
            raise DomainError(f"unknown weight prior {self.weight_prior!r}")
        if not 0 <= self.U <= self.K:
            raise DomainError("need 0 <= U <= K")
        if self.weight_prior == "pc" and not 1 <= self.U < self.K:
            raise DomainError("the PC prior needs 1 <= U < K")
        if self.weight_prior == "gamma" and self.U < 1:
            raise DomainError("the gamma prior needs U >= 1")
        if self.weight_prior == "fixed" and (self.alpha1 is None or not self.alpha1 > 0):
            raise DomainError("weight_prior='fixed' needs a positive alpha1")
        if not self.alpha2 > 0 or not self.mh_step > 0:
            raise DomainError("alpha2 and mh_step must be positive")


@dataclass
class UnivariateModelConfig(WeightPriorConfig):
    mu0: Optional[float] = None       # default mean(y)
    sigma0_sq: float = 100.0
    a0: float = 3.0
    b0: float = 2.0

    def validate(self):
        super().validate()
        if self.a0 <= 1:
            raise DomainError("a0 must exceed 1 so the prior mean of sigma^2 is finite")
        if self.sigma0_sq <= 0 or self.b0 <= 0:
            raise DomainError("variance hyperparameters must be positive")


@dataclass
class ResolvedModel:
    """A config with its data-dependent pieces filled in (mu0, calibrated lambda)."""
    config: UnivariateModelConfig
    mu0: float
    params: AsymDirichletParams
    prior: object
    calibration: Optional[object] = None

    @property
    def K(self):
        return self.params.K

    @property
    def U_block(self):
        return self.params.U


def resolve_alpha_prior(config, n, rng):
    """Concentration prior, weight-block layout and (if needed) the calibration."""
    calib = None
    K, U = config.K, config.U
    kind = config.weight_prior
    if kind == "pc":
        lam = config.lam
        if lam is None:
            calib = calibrate_lambda(U, config.tp, K, n, alpha2_fixed=config.alpha2,
                                     mc_replicates=config.calib_replicates,
                                     tolerance=config.calib_tolerance, rng=rng)
            lam = calib.lambda_star
        prior = PcAlpha(PcPriorSpec(U, K, lam, alpha2_fixed=config.alpha2))
        params = AsymDirichletParams(K, U, prior.initial(), config.alpha2)
    elif kind == "gamma":
        rate = config.gamma_rate if config.gamma_rate is not None else 1.0 / (10.0 * U)
        prior = GammaAlpha(GammaParams(config.gamma_a, rate))
        params = AsymDirichletParams(K, U, prior.initial(), config.alpha2)
    elif kind == "fixed":
        prior = FixedAlpha(float(config.alpha1))
        params = AsymDirichletParams(K, U, prior.value, config.alpha2)
    else:  # symmetric Dirichlet, concentration ~ Gamma(a, rate)
        rate = config.gamma_rate if config.gamma_rate is not None else config.gamma_a * K
        prior = GammaAlpha(GammaParams(config.gamma_a, rate))
        params = AsymDirichletParams(K, K, prior.initial(), 1.0)
    return prior, params, calib


def resolve_model(config, y, rng):
    config.validate()
    y = np.asarray(y, dtype=float)
    mu0 = float(np.mean(y)) if config.mu0 is None else float(config.mu0)
    prior, params, calib = resolve_alpha_prior(config, y.size, rng)
    return ResolvedModel(config=config, mu0=mu0, params=params, prior=prior, calibration=calib)


# ---------------------------------------------------------------------------
# state and conditional updates


@dataclass
class UnivariateChainState:
    z: np.ndarray          # (n,) 0-based labels
    log_w: np.ndarray      # (K,)
    mu: np.ndarray         # (K,)
    sigma_sq: np.ndarray   # (K,)
    alpha1: float

    def copy(self):
        return UnivariateChainState(self.z.copy(), self.log_w.copy(), self.mu.copy(),
                                    self.sigma_sq.copy(), self.alpha1)

    @property
    def kplus(self):
        return int(np.unique(self.z).size)


def sample_weights(counts, params, rng):
    """Weights given allocation counts: Dirichlet(block shapes + counts), in log space."""
    return sample_dirichlet_log(rng, params.shapes + counts)


def update_mu(y, z, sigma_sq, mu0, sigma0_sq, K, rng):
    """Conjugate normal update of all component means (empty ones from the prior)."""
    counts = np.bincount(z, minlength=K)
    sums = np.bincount(z, weights=y, minlength=K)
    prec = counts / sigma_sq + 1.0 / sigma0_sq
    mean = (sums / sigma_sq + mu0 / sigma0_sq) / prec
    return mean + rng.gen.standard_normal(K) / np.sqrt(prec)


def update_sigma_sq(y, z, mu, a0, b0, K, rng, counters=None):
    """Conjugate inverse-gamma update of the component variances."""
    counts = np.bincount(z, minlength=K)
    ss = np.bincount(z, weights=(y - mu[z]) ** 2, minlength=K)
    shape = a0 + 0.5 * counts
    rate = b0 + 0.5 * ss
    s2 = rate / rng.gen.standard_gamma(shape)
    low = s2 < VARIANCE_FLOOR
    if np.any(low):
        if counters is not None:
            counters["variance_floor"] += int(low.sum())
        s2 = np.maximum(s2, VARIANCE_FLOOR)
    return s2


def allocation_log_probs(y, log_w, mu, sigma_sq):
    return (log_w[None, :] - 0.5 * (_LOG_2PI + np.log(sigma_sq))[None, :]
            - 0.5 * (y[:, None] - mu[None, :]) ** 2 / sigma_sq[None, :])


def initial_state(y, model, rng):
    """Quantile binning of y into min(U, K) groups; theta and w then drawn given z."""
    cfg = model.config
    y = np.asarray(y, dtype=float)
    K = model.K
    groups = max(1, min(cfg.U, K))
    ranks = np.argsort(np.argsort(y, kind="stable"), kind="stable")
    z = (ranks * groups // y.size).astype(np.int64)
    mu = np.full(K, model.mu0)
    counts = np.bincount(z, minlength=K)
    sums = np.bincount(z, weights=y, minlength=K)
    occ = counts > 0
    mu[occ] = sums[occ] / counts[occ]
    sigma_sq = np.full(K, cfg.b0 / (cfg.a0 - 1.0))
    alpha1 = model.prior.initial()
    params = model.params.with_alpha1(alpha1)
    log_w = sample_weights(counts, params, rng)
    empty = ~occ
    mu[empty] = model.mu0 + math.sqrt(cfg.sigma0_sq) * rng.gen.standard_normal(int(empty.sum()))
    sigma_sq[empty] = cfg.b0 / rng.gen.standard_gamma(cfg.a0, size=int(empty.sum()))
    return UnivariateChainState(z=z, log_w=log_w, mu=mu, sigma_sq=sigma_sq, alpha1=alpha1)


def gibbs_step(state, y, model, updater, rng, counters=None):
    """One sweep: allocations, weights, means, variances, then alpha1."""
    cfg = model.config
    K = model.K
    s = state
    lp = allocation_log_probs(y, s.log_w, s.mu, s.sigma_sq)
    z = sample_categorical_log_rows(rng, lp)
    counts = np.bincount(z, minlength=K)
    params = model.params.with_alpha1(s.alpha1)
    log_w = sample_weights(counts, params, rng)
    mu = update_mu(y, z, s.sigma_sq, model.mu0, cfg.sigma0_sq, K, rng)
    sigma_sq = update_sigma_sq(y, z, mu, cfg.a0, cfg.b0, K, rng, counters)
    alpha1 = updater.update(s.alpha1, log_w, rng)
    return UnivariateChainState(z=z, log_w=log_w, mu=mu, sigma_sq=sigma_sq, alpha1=alpha1)


def block_swap_log_ratio(log_w, j, k, alpha1, alpha2):
    """Log MH ratio for exchanging block-1 component j with block-2 component k.

    Likelihood and component-parameter priors are invariant under the swap, so
    only the Dirichlet density changes: (w_k / w_j)^(alpha1 - alpha2).
    """
    return (alpha1 - alpha2) * (log_w[k] - log_w[j])


def optional_block_swap_move(state, params, rng, stats=None):
    """Propose exchanging a random block-1 component with a random block-2 one.

    The whole component moves: mean, variance, weight and allocated units.
    """
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
        for arr in (new.log_w, new.mu, new.sigma_sq):
            arr[[j, k]] = arr[[k, j]]
        zj, zk = state.z == j, state.z == k
        new.z[zj] = k
        new.z[zk] = j
        if stats is not None:
            stats["swap_accepted"] += 1
        return new
    return state


# ---------------------------------------------------------------------------
# running a chain


@dataclass
class PosteriorSummary:
    kplus_pmf: np.ndarray
    coclustering: np.ndarray
    partition_draws: np.ndarray     # (draws, n), canonical 1-based labels
    point_partition: np.ndarray     # canonical 1-based labels
    fitted_values: Optional[np.ndarray] = None
    alpha1_trace: Optional[np.ndarray] = None
    kplus_trace: Optional[np.ndarray] = None
    acceptance: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return int(self.partition_draws.shape[0])

    @property
    def kplus_mode(self):
        return int(np.argmax(self.kplus_pmf)) + 1

    @property
    def n_clusters_point(self):
        return int(np.max(self.point_partition))


class PosteriorAccumulator:
    """Running K+ counts, co-clustering sums and canonical partition draws."""

    def __init__(self, n, K):
        self.n, self.K = n, K
        self.kplus_counts = np.zeros(K + 1, dtype=np.int64)
        self.cc = np.zeros((n, n))
        self.draws = []

    def add(self, z):
        onehot = np.zeros((self.n, self.K))
        onehot[np.arange(self.n), z] = 1.0
        self.cc += onehot @ onehot.T
        kp = int(np.count_nonzero(onehot.sum(axis=0)))
        self.kplus_counts[kp] += 1
        self.draws.append(canonical_labels(z))

    def summary(self, **kwargs):
        d = len(self.draws)
        draws = np.array(self.draws, dtype=np.int64)
        cc = self.cc / d
        np.fill_diagonal(cc, 1.0)
        pmf = self.kplus_counts[1:] / d
        point = binder_point_partition(draws, cc)
        return PosteriorSummary(kplus_pmf=pmf, coclustering=cc, partition_draws=draws,
                                point_partition=point, **kwargs)


def retained_sweeps(iters, burn, thin):
    if iters <= burn:
        raise DomainError("iters must exceed burn")
    if thin < 1:
        raise DomainError("thin must be >= 1")
    return (iters - burn) // thin


def run_chain(y, config, iters, burn, thin, seed, model=None, state=None, progress=None):
    """Run one chain and summarise the retained draws.

    Sweep s (1-based) is retained when s > burn and (s - burn) % thin == 0.
    Substreams: 0 for the chain, 1 for the lambda calibration.
    """
    y = np.asarray(y, dtype=float)
    n_keep = retained_sweeps(iters, burn, thin)
    if n_keep < 50:
        log.warning("only %d retained draws", n_keep)
    rng = RngStream(seed, 0)
    if model is None:
        model = resolve_model(config, y, RngStream(seed, 1))
    counters = Counter()
    updater = AlphaUpdater(model.prior, model.params, step=model.config.mh_step)
    if state is None:
        state = initial_state(y, model, rng)
    acc = PosteriorAccumulator(y.size, model.K)
    fitted = np.zeros(y.size)
    alpha_trace = np.empty(n_keep)
    kplus_trace = np.empty(n_keep, dtype=np.int64)
    keep = 0
    if burn == 0:
        updater.freeze()
    for s in range(1, iters + 1):
        state = gibbs_step(state, y, model, updater, rng, counters)
        if model.config.block_swap:
            state = optional_block_swap_move(state, model.params.with_alpha1(state.alpha1), rng, counters)
        if s == burn:
            updater.freeze()
        if s > burn and (s - burn) % thin == 0:
            acc.add(state.z)
            fitted += state.mu[state.z]
            alpha_trace[keep] = state.alpha1
            kplus_trace[keep] = state.kplus
            keep += 1
        if progress is not None:
            progress(s)
    acceptance = {
        "alpha1_acceptance": updater.acceptance_rate,
        "alpha1_step": updater.step,
        "swap_acceptance": (counters["swap_accepted"] / counters["swap_proposed"]
                            if counters["swap_proposed"] else float("nan")),
    }
    extras = {"model": model, "final_state": state}
    return acc.summary(fitted_values=fitted / n_keep, alpha1_trace=alpha_trace,
                       kplus_trace=kplus_trace, acceptance=acceptance,
                       counters=dict(counters), extras=extras)
