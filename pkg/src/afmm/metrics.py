"""Clustering evaluation metrics and the Binder-loss point estimate."""
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "canonical_labels", "coclustering_from_draws", "pwss", "ccprob_error",
    "u_adjusted_mse", "sd_ccp", "ari", "binder_loss", "binder_point_partition",
    "posterior_mode", "mode_bias", "MetricsReport",
]


def canonical_labels(labels):
    """Relabel by order of first appearance: the first unit gets 1, and so on."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv.ravel()] + 1


def _indicator(labels):
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def coclustering_from_draws(draws):
    """Posterior similarity matrix from a (draws, n) array of labels."""
    draws = np.asarray(draws)
    n = draws.shape[1]
    acc = np.zeros((n, n))
    for row in draws:
        acc += row[:, None] == row[None, :]
    return acc / draws.shape[0]


def _check_pmf(pmf):
    pmf = np.asarray(pmf, dtype=float)
    if pmf.ndim != 1 or np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-8:
        raise DomainError("K+ pmf must be a probability vector over 1..K")
    return pmf


def pwss(kplus_pmf, kplus_true):
    """Posterior-probability weighted squared error of K+ around the true value.

    ``kplus_pmf[k - 1]`` is Pr(K+ = k | y).
    """
    pmf = _check_pmf(kplus_pmf)
    if not 1 <= kplus_true <= pmf.size:
        raise DomainError(f"true K+ {kplus_true} outside 1..{pmf.size}")
    k = np.arange(1, pmf.size + 1)
    return float(np.sum((k - kplus_true) ** 2 * pmf))


def posterior_mode(kplus_pmf):
    return int(np.argmax(np.asarray(kplus_pmf))) + 1


def mode_bias(kplus_pmf, kplus_true):
    return posterior_mode(kplus_pmf) - int(kplus_true)


def _check_cc(cc):
    cc = np.asarray(cc, dtype=float)
    if cc.ndim != 2 or cc.shape[0] != cc.shape[1]:
        raise DomainError("co-clustering matrix must be square")
    if not np.allclose(cc, cc.T, atol=1e-12) or not np.allclose(np.diag(cc), 1.0, atol=1e-12):
        raise DomainError("co-clustering matrix must be symmetric with unit diagonal")
    return cc


def ccprob_error(coclustering, truth):
    """Sum over unordered pairs of (same-cluster indicator - co-clustering probability)^2."""
    cc = _check_cc(coclustering)
    truth = np.asarray(truth)
    if truth.size != cc.shape[0]:
        raise DomainError("truth length does not match the matrix")
    diff = _indicator(truth) - cc
    return float(np.sum(np.triu(diff, 1) ** 2))


def u_adjusted_mse(y, y_hat, K, U):
    """Residual sum of squares divided by n (K - U)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if K <= U:
        raise DomainError("needs K > U")
    return float(np.sum((y - y_hat) ** 2) / (y.size * (K - U)))


def sd_ccp(coclustering):
    """Average over units of the population SD of their co-clustering probabilities.

    The self-pair (always 1) is excluded.
    """
    cc = _check_cc(coclustering)
    n = cc.shape[0]
    if n < 2:
        return 0.0
    off = cc[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    return float(np.mean(off.std(axis=1)))


def ari(a, b):
    """Hubert-Arabie adjusted Rand index."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DomainError("partitions must have equal length")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1) / 2.0))

    index = pairs(table)
    sa, sb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    expected = sa * sb / total if total else 0.0
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def binder_loss(labels, coclustering):
    """Sum over unordered pairs of (indicator - coclustering)^2."""
    return ccprob_error(coclustering, labels)


def binder_point_partition(partition_draws, coclustering, chunk=64):
    """The stored draw with the smallest Binder loss against ``coclustering``.

    Ties go to the earliest draw. The returned labels are canonicalised.
    """
    draws = np.asarray(partition_draws)
    if draws.ndim != 2 or draws.shape[0] < 1:
        raise DomainError("need at least one partition draw")
    cc = np.asarray(coclustering, dtype=float)
    n = draws.shape[1]
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    # sum_{j<l} (I - C)^2 = sum_{j<l} I (1 - 2C) + const
    weight = np.where(upper, 1.0 - 2.0 * cc, 0.0)
    losses = np.empty(draws.shape[0])
    for s in range(0, draws.shape[0], chunk):
        block = draws[s:s + chunk]
        same = block[:, :, None] == block[:, None, :]
        losses[s:s + chunk] = np.einsum("dij,ij->d", same, weight)
    best = int(np.argmin(losses))
    return canonical_labels(draws[best])


@dataclass
class MetricsReport:
    pwss: Optional[float] = None
    ccprob_error: Optional[float] = None
    mode_bias: Optional[int] = None
    mse: Optional[float] = None
    sd_ccp: Optional[float] = None
    ari: Optional[float] = None
    kplus_mode: Optional[int] = None
    n_clusters_point: Optional[int] = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}
