"""Monte Carlo induced prior on K+, the number of occupied components.

Each replicate draws the weight-prior hyperparameters, the weights and ``n``
allocations, and records how many distinct components were used. Replicates
are processed in fixed-size chunks and chunk ``j`` uses substream ``j``, so the
result does not depend on how chunks are scheduled.
"""
from dataclasses import dataclass, field

import numpy as np

from .asym_dirichlet import AsymDirichletParams
from .errors import DomainError
from .pc_prior import PcPriorSpec, kplus_from_log_weights, sample_alpha1
from .rng import sample_log_gamma

__all__ = [
    "AsymFixed", "AsymPc", "SymStatic", "SymGamma", "Dpm", "MfmmUniformK",
    "InducedPriorResult", "induced_kplus_prior", "crp_seating",
]

CHUNK = 10000


@dataclass(frozen=True)
class AsymFixed:
    params: AsymDirichletParams

    def support(self, n):
        return min(self.params.K, n)

    def describe(self):
        p = self.params
        return {"family": "asym", "K": p.K, "U": p.U, "alpha1": p.alpha1, "alpha2": p.alpha2}


@dataclass(frozen=True)
class AsymPc:
    spec: PcPriorSpec

    def support(self, n):
        return min(self.spec.K, n)

    def describe(self):
        return {"family": "asym-pc", **self.spec.describe()}


@dataclass(frozen=True)
class SymStatic:
    K: int
    alpha: float

    def support(self, n):
        return min(self.K, n)

    def describe(self):
        return {"family": "sym", "K": self.K, "alpha": self.alpha}


@dataclass(frozen=True)
class SymGamma:
    """Symmetric Dirichlet whose concentration has a Gamma(a, rate=b) prior."""
    K: int
    a: float
    b: float

    def support(self, n):
        return min(self.K, n)

    def describe(self):
        return {"family": "sym-gamma", "K": self.K, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Dpm:
    alpha: float

    def support(self, n):
        return n

    def describe(self):
        return {"family": "dpm", "alpha": self.alpha}


@dataclass(frozen=True)
class MfmmUniformK:
    """Static mixture of finite mixtures: K uniform on {1..K_max}, w ~ Dirichlet(alpha)."""
    alpha: float
    K_max: int = 20

    def support(self, n):
        return min(self.K_max, n)

    def describe(self):
        return {"family": "mfmm-unifK", "K_max": self.K_max, "alpha": self.alpha}


@dataclass
class InducedPriorResult:
    pmf: np.ndarray
    mc_se: np.ndarray
    n: int
    replicates: int
    seed: int
    family: dict = field(default_factory=dict)

    @property
    def kplus(self):
        return np.arange(1, self.pmf.size + 1)

    @property
    def mode(self):
        return int(np.argmax(self.pmf)) + 1

    def prob(self, k):
        return float(self.pmf[k - 1]) if 1 <= k <= self.pmf.size else 0.0

    def mean(self):
        return float(np.sum(self.kplus * self.pmf))


def _chunk_kplus(family, n, size, rng):
    gen = rng.gen
    if isinstance(family, Dpm):
        i = np.arange(n)
        new_table = gen.random((size, n)) < family.alpha / (family.alpha + i)
        return new_table.sum(axis=1)
    if isinstance(family, AsymFixed):
        shapes = family.params.shapes
        log_g = sample_log_gamma(rng, np.broadcast_to(shapes, (size, shapes.size)), size=(size, shapes.size))
    elif isinstance(family, AsymPc):
        spec = family.spec
        a1 = sample_alpha1(rng, spec, size=size)
        g1 = sample_log_gamma(rng, np.repeat(a1[:, None], spec.U, axis=1), size=(size, spec.U))
        g2 = sample_log_gamma(rng, spec.alpha2_fixed, size=(size, spec.K - spec.U))
        log_g = np.concatenate([g1, g2], axis=1)
    elif isinstance(family, SymStatic):
        log_g = sample_log_gamma(rng, family.alpha, size=(size, family.K))
    elif isinstance(family, SymGamma):
        alpha = gen.standard_gamma(family.a, size=size) / family.b
        alpha = np.maximum(alpha, np.finfo(float).tiny)
        log_g = sample_log_gamma(rng, np.repeat(alpha[:, None], family.K, axis=1), size=(size, family.K))
    elif isinstance(family, MfmmUniformK):
        k = gen.integers(1, family.K_max + 1, size=size)
        log_g = sample_log_gamma(rng, family.alpha, size=(size, family.K_max))
        log_g[np.arange(family.K_max)[None, :] >= k[:, None]] = -np.inf
    else:
        raise DomainError(f"unknown weight-prior family {family!r}")
    return kplus_from_log_weights(log_g, gen.random((size, n)))


def induced_kplus_prior(family, n, replicates, rng):
    """Empirical pmf of K+ over ``replicates`` draws from the generative chain."""
    if int(n) != n or n < 1 or int(replicates) != replicates or replicates < 1:
        raise DomainError("n and replicates must be positive integers")
    n, replicates = int(n), int(replicates)
    support = family.support(n)
    counts = np.zeros(support + 1, dtype=np.int64)
    done = 0
    j = 0
    while done < replicates:
        size = min(CHUNK, replicates - done)
        kp = _chunk_kplus(family, n, size, rng.spawn(j))
        counts += np.bincount(kp, minlength=support + 1)[: support + 1]
        done += size
        j += 1
    pmf = counts[1:] / replicates
    se = np.sqrt(pmf * (1.0 - pmf) / replicates)
    return InducedPriorResult(pmf=pmf, mc_se=se, n=n, replicates=replicates,
                              seed=rng.seed, family=family.describe())


def crp_seating(rng, alpha, n):
    """Seat ``n`` customers by the Chinese-restaurant rule; returns table labels 0..T-1."""
    labels = np.empty(n, dtype=np.int64)
    sizes = []
    for i in range(n):
        p = np.array(sizes + [alpha], dtype=float)
        t = int(rng.gen.choice(p.size, p=p / p.sum()))
        if t == len(sizes):
            sizes.append(0)
        sizes[t] += 1
        labels[i] = t
    return labels
