"""Synthetic data for the simulation study and for the functional model."""
import math
from dataclasses import dataclass

import numpy as np

from . import asym_dirichlet
from .asym_dirichlet import AsymDirichletParams
from .errors import DomainError
from .functional import BsplineBasis, FunctionalData
from .rng import sample_categorical_log_rows

__all__ = [
    "DataType1Spec", "DataType2Spec", "gen_type1", "gen_type2", "default_templates",
    "gen_functional",
]


@dataclass(frozen=True)
class DataType1Spec:
    """K+ equally weighted, well separated normals: means 3(k-1), SD 0.5."""
    kplus_true: int = 2
    n: int = 100
    sigma: float = 0.5
    spacing: float = 3.0

    def __post_init__(self):
        if self.kplus_true < 1 or self.n < 1 or not self.sigma > 0:
            raise DomainError("need kplus_true >= 1, n >= 1 and sigma > 0")


@dataclass(frozen=True)
class DataType2Spec:
    """Data drawn from the model itself with block Dirichlet weights.

    Component SDs are Uniform(0, A).
    """
    U: int = 5
    n: int = 100
    K: int = 25
    alpha2: float = 1e-3
    A: float = 1.0
    mu0: float = 0.0
    sigma0_sq: float = 3.0

    @property
    def alpha1(self):
        return float(self.U)

    def weight_params(self):
        return AsymDirichletParams(self.K, self.U, self.alpha1, self.alpha2)


def gen_type1(spec, rng):
    """Returns (y, truth) with truth labels in 1..kplus_true."""
    z = rng.gen.integers(0, spec.kplus_true, size=spec.n)
    y = spec.spacing * z + spec.sigma * rng.gen.standard_normal(spec.n)
    return y, z + 1


def gen_type2(spec, rng):
    """Returns (y, truth); truth holds the generating component labels (1-based)."""
    if spec.n < 1:
        raise DomainError("n must be positive")
    log_w = asym_dirichlet.sample(rng, spec.weight_params())
    z = sample_categorical_log_rows(rng, np.broadcast_to(log_w, (spec.n, spec.K)))
    mu = spec.mu0 + math.sqrt(spec.sigma0_sq) * rng.gen.standard_normal(spec.K)
    sd = spec.A * rng.gen.random(spec.K)
    y = mu[z] + sd[z] * rng.gen.standard_normal(spec.n)
    return y, z + 1


def default_templates(count, basis=None, amplitude=1.0):
    """Coefficient vectors of phase-shifted sine curves.

    Spline coefficients are close to the curve's values at the Greville
    abscissae, so evaluating there gives a smooth template.
    """
    basis = basis or BsplineBasis()
    g = basis.greville()
    return [amplitude * np.sin(2.0 * math.pi * (g + j / count)) for j in range(count)]


def gen_functional(templates, n=60, kappa=0.05, sigma=0.0005, grid=None, rng=None,
                   basis=None, beta0_sd=1.0):
    """Curves y_i = beta0_i + B beta_i + noise, beta_i ~ N(template, kappa^2 I).

    Subjects cycle through a uniformly drawn template assignment. Returns
    (FunctionalData, truth labels in 1..len(templates), coefficient draws).
    """
    if rng is None:
        raise DomainError("an RngStream is required")
    basis = basis or BsplineBasis()
    grid = np.linspace(0.0, 1.0, 50) if grid is None else np.asarray(grid, dtype=float)
    T = np.asarray(templates, dtype=float)
    if T.ndim != 2 or T.shape[1] != basis.p:
        raise DomainError(f"templates must be vectors of length {basis.p}")
    if kappa < 0 or sigma < 0:
        raise DomainError("kappa and sigma must be non-negative")
    B = basis.design(grid)
    z = rng.gen.integers(0, T.shape[0], size=n)
    beta = T[z] + kappa * rng.gen.standard_normal((n, basis.p))
    beta0 = beta0_sd * rng.gen.standard_normal(n)
    curves = beta0[:, None] + beta @ B.T + sigma * rng.gen.standard_normal((n, grid.size))
    data = FunctionalData(ids=list(range(1, n + 1)), grids=[grid.copy() for _ in range(n)],
                          ys=list(curves))
    return data, z + 1, np.column_stack([beta0, beta])
