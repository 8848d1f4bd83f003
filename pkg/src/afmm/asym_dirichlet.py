"""Block-structured ("asymmetric") Dirichlet prior on mixture weights.

The first ``U`` components share concentration ``alpha1`` and the remaining
``K - U`` share ``alpha2``. ``U = 0`` and ``U = K`` are ordinary symmetric
Dirichlets and go through the same code (empty blocks contribute empty sums).
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .rng import logsumexp, sample_dirichlet_log, sample_dirichlet_log_batch
from .special import log_gamma

__all__ = ["AsymDirichletParams", "log_density", "sample", "sample_batch", "block_mean"]


@dataclass(frozen=True)
class AsymDirichletParams:
    K: int
    U: int
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise DomainError(f"K must be an integer >= 2, got {self.K}")
        if int(self.U) != self.U or not 0 <= self.U <= self.K:
            raise DomainError(f"U must be an integer in [0, K], got {self.U}")
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise DomainError("alpha1 and alpha2 must be positive")

    @property
    def shapes(self):
        return np.concatenate([np.full(self.U, float(self.alpha1)),
                               np.full(self.K - self.U, float(self.alpha2))])

    @property
    def total(self):
        return self.alpha1 * self.U + self.alpha2 * (self.K - self.U)

    def with_alpha1(self, alpha1):
        return AsymDirichletParams(self.K, self.U, alpha1, self.alpha2)


def _block_term(exponent, log_w):
    # (alpha - 1) * sum(log w) with the 0 * (-inf) and boundary cases made explicit
    if log_w.size == 0 or exponent == 0.0:
        return 0.0
    if np.any(np.isneginf(log_w)):
        return math.inf if exponent < 0 else -math.inf
    return exponent * float(np.sum(log_w))


def log_density(params, log_w, check=True):
    """Log Dirichlet density at ``w = exp(log_w)``.

    Returns ``+inf`` when a weight is exactly zero inside a block whose shape
    is below one (the density is unbounded there); callers decide what to do.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.shape != (params.K,):
        raise DomainError(f"expected {params.K} log-weights, got shape {log_w.shape}")
    if check and abs(logsumexp(log_w)) > 1e-8:
        raise DomainError("weights are not on the simplex")
    U, K = params.U, params.K
    norm = log_gamma(params.total)
    if U:
        norm -= U * log_gamma(params.alpha1)
    if K - U:
        norm -= (K - U) * log_gamma(params.alpha2)
    t1 = _block_term(params.alpha1 - 1.0, log_w[:U])
    t2 = _block_term(params.alpha2 - 1.0, log_w[U:])
    return norm + t1 + t2


def sample(rng, params):
    """Log-weights drawn from the block Dirichlet."""
    return sample_dirichlet_log(rng, params.shapes)


def sample_batch(rng, params, size):
    return sample_dirichlet_log_batch(rng, params.shapes, size)


def block_mean(params):
    """Prior expectations of a weight in block 1 and in block 2."""
    t = params.total
    return params.alpha1 / t, params.alpha2 / t
