"""Seedable random streams and the elementary samplers built on them.

Every sampler takes an :class:`RngStream`. Streams are derived from a
``numpy.random.SeedSequence`` keyed by ``(seed, stream_id, *path)`` and drive a
counter-based Philox generator, so substream ``j`` of a run is reproducible no
matter how replicates are scheduled.

Mixture weights are handled in log space throughout: Dirichlet shapes as small
as 1e-5 produce weights that underflow double precision.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .special import log_gamma

__all__ = [
    "RngStream", "GammaParams", "logsumexp", "sample_gamma", "sample_log_gamma",
    "sample_dirichlet_log", "sample_dirichlet_log_batch",
    "sample_categorical_log", "sample_categorical_log_rows", "sample_normal",
    "sample_inverse_gamma", "sample_exponential", "sample_uniform",
    "sample_mvn_precision",
]

_MASK64 = (1 << 64) - 1


class RngStream:
    """A single-owner random stream identified by ``(seed, stream_id)``.

    ``spawn(j)`` derives a child stream; children of the same parent with
    distinct ``j`` are independent.
    """

    def __init__(self, seed, stream_id=0, _path=()):
        if seed < 0 or stream_id < 0:
            raise DomainError("seed and stream_id must be non-negative")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self._path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, j):
        return RngStream(self.seed, self.stream_id, self._path + (int(j),))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self._path})"


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0 and np.isfinite(self.shape) and np.isfinite(self.rate)):
            raise DomainError(f"gamma shape and rate must be positive, got {self.shape}, {self.rate}")

    @property
    def mean(self):
        return self.shape / self.rate

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return (self.shape * np.log(self.rate) - log_gamma(self.shape)
                + (self.shape - 1.0) * np.log(x) - self.rate * x)


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def sample_log_gamma(rng, shape, rate=1.0, size=None):
    """Log of Gamma(shape, rate) draws; finite even when the draw underflows.

    Shapes below one are boosted: G_a = G_{a+1} * V**(1/a) with V uniform,
    evaluated as log G_{a+1} + log(V) / a.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise DomainError("gamma shape and rate must be positive")
    if size is None:
        size = np.broadcast(shape, rate).shape
    small = shape < 1.0
    g = rng.gen.standard_gamma(np.where(small, shape + 1.0, shape), size=size)
    out = np.log(g)
    if np.any(small):
        u = rng.gen.random(size=size)
        boost = np.log(u) / shape
        out = np.where(small, out + boost, out)
    out = out - np.log(rate)
    return out if np.ndim(out) else float(out)


def sample_gamma(rng, p, size=None):
    """Gamma(shape, rate) draws on the linear scale (may underflow to 0)."""
    return np.exp(sample_log_gamma(rng, p.shape, p.rate, size=size))


def sample_dirichlet_log(rng, shapes):
    """One Dirichlet draw returned as log-weights normalised in log space."""
    shapes = np.asarray(shapes, dtype=float)
    if shapes.ndim != 1 or shapes.size < 2:
        raise DomainError("Dirichlet needs a vector of at least two shapes")
    if np.any(~(shapes > 0)):
        raise DomainError("Dirichlet shapes must be positive")
    lg = sample_log_gamma(rng, shapes)
    return lg - logsumexp(lg)


def sample_dirichlet_log_batch(rng, shapes, size):
    """``size`` independent Dirichlet draws, shape (size, K); ``shapes`` may be (K,) or (size, K)."""
    shapes = np.asarray(shapes, dtype=float)
    if np.any(~(shapes > 0)):
        raise DomainError("Dirichlet shapes must be positive")
    k = shapes.shape[-1]
    lg = sample_log_gamma(rng, np.broadcast_to(shapes, (size, k)), size=(size, k))
    return lg - logsumexp(lg, axis=1)[:, None]


def sample_categorical_log(rng, log_probs):
    """Index drawn with probability proportional to exp(log_probs) (Gumbel-max)."""
    lp = np.asarray(log_probs, dtype=float)
    if lp.ndim != 1 or lp.size == 0 or not np.any(np.isfinite(lp)) or np.any(lp == np.inf):
        raise DomainError("log_probs must contain at least one finite entry and no +inf")
    return int(np.argmax(lp + rng.gen.gumbel(size=lp.size)))


def sample_categorical_log_rows(rng, log_probs):
    """Row-wise categorical draws for an (n, K) matrix of unnormalised log-probabilities."""
    lp = np.asarray(log_probs, dtype=float)
    if not np.all(np.any(np.isfinite(lp), axis=1)):
        raise DomainError("every row needs at least one finite log-probability")
    return np.argmax(lp + rng.gen.gumbel(size=lp.shape), axis=1)


def sample_normal(rng, mean=0.0, sd=1.0, size=None):
    return rng.gen.normal(mean, sd, size=size)


def sample_inverse_gamma(rng, a, b, size=None):
    """Inverse-Gamma(a, b) with density proportional to x^(-a-1) exp(-b/x); mean b/(a-1)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("inverse-gamma parameters must be positive")
    return b / rng.gen.standard_gamma(a, size=size)


def sample_exponential(rng, rate=1.0, size=None):
    if np.any(np.asarray(rate) <= 0):
        raise DomainError("exponential rate must be positive")
    return rng.gen.standard_exponential(size=size) / rate


def sample_uniform(rng, low=0.0, high=1.0, size=None):
    return rng.gen.uniform(low, high, size=size)


def sample_mvn_precision(rng, mean, precision):
    """Multivariate normal draw with the given precision matrix.

    With Q = L L' (Cholesky), x = mean + L'^{-1} xi has covariance Q^{-1}.
    """
    mean = np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(precision)
    xi = rng.gen.standard_normal(mean.shape[-1])
    return mean + np.linalg.solve(chol.T, xi)
