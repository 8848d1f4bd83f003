"""Asymmetric-Dirichlet finite mixtures with a PC prior on the block concentration.

The weights of a K-component mixture get a Dirichlet prior with concentration
alpha1 on the first U components and a tiny alpha2 on the rest, so U acts as a
soft upper bound on the number of occupied clusters. A penalised-complexity
prior on alpha1, calibrated to a target Pr(K+ < U), completes the weight prior.
"""
from .asym_dirichlet import AsymDirichletParams
from .errors import CalibrationError, DataError, DomainError, NumericalError
from .functional import FunctionalData, FunctionalHyperparams, FunctionalModelConfig, fit_functional
from .gibbs import PosteriorSummary, UnivariateModelConfig, run_chain
from .induced import induced_kplus_prior
from .pc_prior import PcPriorSpec, calibrate_lambda, log_pc_density, sample_alpha1
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "AsymDirichletParams", "CalibrationError", "DataError", "DomainError", "NumericalError",
    "FunctionalData", "FunctionalHyperparams", "FunctionalModelConfig", "fit_functional",
    "PosteriorSummary", "UnivariateModelConfig", "run_chain", "induced_kplus_prior",
    "PcPriorSpec", "calibrate_lambda", "log_pc_density", "sample_alpha1", "RngStream",
]
