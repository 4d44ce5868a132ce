"""Compound functional models: simulation, aggregated projection estimators,
Monte-Carlo risk benchmarks and checks of lower-bound constructions."""
from importlib.metadata import PackageNotFoundError, version

from .aggregation import (
    Candidate,
    CandidateSpace,
    McmcConfig,
    McmcResult,
    WeightedEnsemble,
    exact_aggregate,
    lemma1_bandwidth,
    lemma1_risk_bound,
    log_prior,
    mcmc_aggregate,
    penalty,
    projection_estimate,
)
from .basis import CoefficientMap, IndexBox, enumerate_indices, eval_basis, eval_function
from .compound import (
    CompoundFunction,
    SobolevBall,
    Structure,
    compose,
    make_structure,
    make_tensor_atom,
    sample_sobolev_atom,
    verify_condition_3a,
)
from .errors import CapacityError, CompoundModelError, DomainError, ParameterError, StructureError
from .risk import RateFit, RiskReport, mc_risk, mise, rate_fit, theorem2_bound, theoretical_rate
from .sequence import SequenceObservation, kl_divergence, observe

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"
