"""Bayesian generalised nonlinear models fitted by genetically modified mode-jumping MCMC."""

__version__ = "0.1.0"

from .features import (  # noqa: E402
    Feature,
    Input,
    Modification,
    Multiplication,
    Projection,
    count_features,
    enumerate_features,
    evaluate,
    flat_key,
    measure,
)
from .glm import BERNOULLI, GAUSSIAN, POISSON, FamilySpec, fit_mle, log_marginal  # noqa: E402
from .gmjmcmc import Chain, GMJMCMCConfig, RunSummary, run_chain  # noqa: E402
from .mjmcmc import KernelConfig, SearchSpace  # noqa: E402
from .model_space import VisitedStore, inclusion_probabilities, posterior  # noqa: E402
from .parallel import aggregate, run_parallel  # noqa: E402
from .transforms import TransformLibrary  # noqa: E402

__all__ = [
    "Feature", "Input", "Modification", "Multiplication", "Projection", "count_features",
    "enumerate_features", "evaluate", "flat_key", "measure", "BERNOULLI", "GAUSSIAN", "POISSON",
    "FamilySpec", "fit_mle", "log_marginal", "Chain", "GMJMCMCConfig", "RunSummary", "run_chain",
    "KernelConfig", "SearchSpace", "VisitedStore", "inclusion_probabilities", "posterior",
    "aggregate", "run_parallel", "TransformLibrary",
]
