"""Monte-Carlo risk evaluation, closed-form rate formulas and log-log rate fits."""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .aggregation import (
    Candidate,
    CandidateSpace,
    McmcConfig,
    exact_aggregate,
    lemma1_candidate,
    log_prior,
    mcmc_aggregate,
    projection_estimate,
    resolve_grid,
    IndexLayout,
)
from .basis import CoefficientMap, IndexBox
from .compound import CompoundFunction, Structure
from .errors import DomainError, ParameterError
from .sequence import SequenceObservation, observe, tail_energy

log = logging.getLogger(__name__)


def mise(estimate: CoefficientMap, truth: CoefficientMap, tail: float = 0.0) -> float:
    """||f_hat - f||^2 by Parseval over the union of both index sets, plus ``tail``."""
    return (estimate - truth).sq_norm() + tail


# --- estimator specs (picklable callables obs -> CoefficientMap) ------------

@dataclass(frozen=True)
class ProjectionEstimator:
    candidate: Candidate

    def __call__(self, obs: SequenceObservation) -> CoefficientMap:
        return projection_estimate(obs, self.candidate)


@dataclass(frozen=True)
class Lemma1Estimator:
    """Projection estimator on a known structure with the oracle bandwidth rule."""

    structure: Structure
    beta: float
    L: float

    def candidate(self, epsilon: float, cutoff: int) -> Candidate:
        return lemma1_candidate(self.structure, self.beta, self.L, epsilon, cutoff)

    def __call__(self, obs: SequenceObservation) -> CoefficientMap:
        return projection_estimate(obs, self.candidate(obs.epsilon, obs.cutoff))


@dataclass(frozen=True)
class AggregateEstimator:
    """Exact exponentially weighted aggregate over a candidate space."""

    space: CandidateSpace
    grid: int | None = None

    def __call__(self, obs: SequenceObservation) -> CoefficientMap:
        return exact_aggregate(obs, self.space.candidates(), self.grid)[1]


@dataclass(frozen=True)
class McmcEstimator:
    space: CandidateSpace
    config: McmcConfig
    grid: int | None = None

    def __call__(self, obs: SequenceObservation) -> CoefficientMap:
        cfg = self.config
        if obs.seed is not None:
            cfg = McmcConfig(cfg.steps, cfg.burn_in, cfg.p_resample, cfg.p_birth_death,
                             cfg.p_bandwidth, replicate_seed(cfg.seed, obs.seed), cfg.batches)
        return mcmc_aggregate(obs, cfg, self.space, self.grid).estimate


def replicate_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r]).generate_state(1, np.uint64)[0])


@dataclass
class RiskReport:
    epsilon: float
    replicates: int
    mean_mise: float
    stderr: float
    tail_energy: float
    active_branch: str = ""
    theoretical_rate: float = float("nan")
    samples: np.ndarray = field(default=None, repr=False)


def _one_replicate(args) -> float:
    truth, epsilon, cutoff, max_support, estimator, seed, tail = args
    obs = observe(truth, epsilon, IndexBox(truth.d, cutoff), seed, max_support=max_support)
    return mise(estimator(obs), _inside(truth, obs), tail)


def _inside(truth: CoefficientMap, obs: SequenceObservation) -> CoefficientMap:
    keys = set(map(tuple, obs.indices.tolist()))
    return truth.restricted(lambda j: j in keys)


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))
    return [fn(x) for x in items]


def mc_risk(model: CompoundFunction | CoefficientMap, estimator: Callable, epsilon: float,
            replicates: int, seed: int, cutoff: int, max_support: int | None = None,
            threads: int = 1) -> RiskReport:
    """Mean and standard error of the MISE over independent replicates.

    Observations live on {|j|_inf <= cutoff} (optionally only indices with at
    most ``max_support`` nonzero entries); the truth's energy outside that set
    is charged to every replicate as tail energy.
    """
    if replicates < 2:
        raise DomainError("at least two replicates are needed for a standard error")
    truth = model.coefficients if isinstance(model, CompoundFunction) else model
    probe = observe(truth, epsilon, IndexBox(truth.d, cutoff), 0, max_support=max_support,
                    noise=0.0)
    tail = tail_energy(truth, probe.indices)
    jobs = [(truth, epsilon, cutoff, max_support, estimator, replicate_seed(seed, r), tail)
            for r in range(replicates)]
    vals = np.array(_map(_one_replicate, jobs, threads))
    return RiskReport(float(epsilon), replicates, math.fsum(vals) / replicates,
                      float(vals.std(ddof=1) / math.sqrt(replicates)), tail, samples=vals)


# --- oracle inequality -------------------------------------------------------

@dataclass
class OracleCheck:
    aggregate: RiskReport
    candidate_risk: np.ndarray  # mean MISE of each candidate
    complexity: np.ndarray      # 4 eps^2 log(1/pi)
    candidates: list[Candidate]

    @property
    def oracle_index(self) -> int:
        return int(np.argmin(self.candidate_risk + self.complexity))

    @property
    def oracle_bound(self) -> float:
        i = self.oracle_index
        return float(self.candidate_risk[i] + self.complexity[i])

    def holds(self, n_stderr: float = 3.0) -> bool:
        return self.aggregate.mean_mise <= self.oracle_bound + n_stderr * self.aggregate.stderr


def oracle_inequality_check(model: CompoundFunction, space: CandidateSpace, epsilon: float,
                            replicates: int, seed: int, cutoff: int,
                            max_support: int | None = None, grid: int | None = None) -> OracleCheck:
    """Monte-Carlo risks of the aggregate and of every candidate on common replicates."""
    truth = model.coefficients
    cands = space.candidates()
    agg = np.empty(replicates)
    cand_sum = np.zeros(len(cands))
    complexity = None
    tail = None
    masks = None
    for r in range(replicates):
        obs = observe(truth, epsilon, IndexBox(truth.d, cutoff), replicate_seed(seed, r),
                      max_support=max_support)
        if masks is None:
            layout = IndexLayout(obs.indices)
            masks = np.array([layout.kept(c) for c in cands])
            theta = np.array([truth.get(tuple(j)) for j in obs.indices.tolist()])
            tail = tail_energy(truth, obs.indices)
            g = resolve_grid(obs, grid)
            complexity = np.array([-4 * epsilon**2 * log_prior(c, truth.d, grid=g) for c in cands])
        ens, est = exact_aggregate(obs, cands, grid)
        agg[r] = mise(est, _inside(truth, obs), tail)
        # candidate errors: kept coordinates carry noise, dropped ones carry bias
        err_kept = (obs.values - theta) ** 2
        err_drop = theta**2
        cand_sum += masks @ err_kept + (~masks) @ err_drop + tail
    report = RiskReport(float(epsilon), replicates, math.fsum(agg) / replicates,
                        float(agg.std(ddof=1) / math.sqrt(replicates)), tail, samples=agg)
    return OracleCheck(report, cand_sum / replicates, complexity, cands)


# --- closed-form rates ------------------------------------------------------

def _rate_terms(beta, L, epsilon, s, m, d):
    nonpar = m * L ** (s / (2 * beta + s)) * epsilon ** (4 * beta / (2 * beta + s))
    arg = d / (s * m ** (1.0 / s))
    if arg <= 1.0:
        warnings.warn(f"d/(s m^(1/s)) = {arg:.4g} <= 1; the logarithm is clamped at 0",
                      RuntimeWarning, stacklevel=3)
    structural = m * s * epsilon**2 * max(math.log(arg), 0.0)
    return nonpar, structural


def theoretical_rate(beta: float, L: float, epsilon: float, s: int, m: int, d: int) -> float:
    """max{m L^{s/(2b+s)} eps^{4b/(2b+s)}, m s eps^2 log(d/(s m^{1/s}))} min L."""
    nonpar, structural = _rate_terms(beta, L, epsilon, s, m, d)
    return min(max(nonpar, structural), L)


def rate_exponent(beta: float, s: int) -> float:
    return 4.0 * beta / (2.0 * beta + s)


def active_branch(beta: float, L: float, epsilon: float, s: int, m: int, d: int) -> str:
    """Which term of the rate is in force: 'nonparametric', 'structural' or 'trivial' (the L clamp)."""
    nonpar, structural = _rate_terms(beta, L, epsilon, s, m, d)
    if max(nonpar, structural) >= L:
        return "trivial"
    return "nonparametric" if nonpar >= structural else "structural"


def theorem2_bound(k: int, s: int, m: int, d: int, epsilon: float) -> float:
    """m eps^2 {(2k+1)^s + 4 log(2 eps^-2) + 4 s log(2 e^3 d / (s m^{1/s}))}."""
    if k >= epsilon**-2:
        raise ParameterError(f"the structural bound requires k < eps^-2 ({k} >= {epsilon**-2:.6g})")
    if m == 0:
        return 0.0
    return m * epsilon**2 * ((2 * k + 1) ** s + 4 * math.log(2 * epsilon**-2)
                             + 4 * s * math.log(2 * math.e**3 * d / (s * m ** (1.0 / s))))


def theorem1_preconditions(beta: float, L: float, epsilon: float, s: int) -> list[str]:
    """Names of the violated rate preconditions (empty when all hold)."""
    bad = []
    if math.log(epsilon**-2) < math.log(L) / (2 * beta):
        bad.append("log(eps^-2) >= log(L)/(2 beta)")
    if L <= epsilon**2 * math.log(math.e * epsilon**-2) ** ((2 * beta + s) / s):
        bad.append("L > eps^2 log(e eps^-2)^((2 beta + s)/s)")
    return bad


# --- rate fitting -----------------------------------------------------------

@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    target_exponent: float | None

    def deviation(self) -> float:
        return abs(self.slope - self.target_exponent)


def rate_fit(reports: Sequence[RiskReport], target_exponent: float | None = None) -> RateFit:
    """OLS of log(mean_mise) on log(epsilon) within a single rate branch."""
    eps = np.array([r.epsilon for r in reports], dtype=float)
    risk = np.array([r.mean_mise for r in reports], dtype=float)
    if len(set(eps.tolist())) < 4:
        raise DomainError("rate fitting needs at least 4 distinct noise levels")
    if np.any(risk <= 0):
        raise DomainError("rate fitting needs strictly positive risks")
    branches = {r.active_branch for r in reports if r.active_branch}
    if len(branches) > 1:
        raise DomainError(
            f"the active rate branch changes across the grid ({sorted(branches)}); "
            "a single power law does not apply, narrow the noise grid")
    if math.log10(eps.max() / eps.min()) < 1.0:
        log.warning("noise grid spans less than one decade (%.2f)", math.log10(eps.max() / eps.min()))
    res = stats.linregress(np.log(eps), np.log(risk))
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue**2), target_exponent)


def benchmark(model: CompoundFunction, estimator: Callable, eps_grid: Sequence[float],
              replicates: int, seed: int, cutoff_for: Callable[[float], int],
              beta: float, L: float, s: int, m: int, max_support: int | None = None,
              threads: int = 1) -> list[RiskReport]:
    out = []
    for i, eps in enumerate(eps_grid):
        rep = mc_risk(model, estimator, eps, replicates, replicate_seed(seed, 10**6 + i),
                      cutoff_for(eps), max_support, threads)
        rep.active_branch = active_branch(beta, L, eps, s, m, model.d)
        rep.theoretical_rate = theoretical_rate(beta, L, eps, s, m, model.d)
        out.append(rep)
    return out


def write_reports_csv(reports: Sequence[RiskReport], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "replicates", "mean_mise", "stderr", "tail_energy",
                "active_branch", "theoretical_rate"])
    for r in reports:
        w.writerow([repr(r.epsilon), r.replicates, repr(r.mean_mise), repr(r.stderr),
                    repr(r.tail_energy), r.active_branch, repr(r.theoretical_rate)])
    Path(path).write_text(buf.getvalue())


def write_plot_data(reports: Sequence[RiskReport], path) -> None:
    """Two whitespace-separated columns: log(epsilon) log(mean_mise)."""
    lines = ["# log_epsilon log_mean_mise"]
    lines += [f"{math.log(r.epsilon)!r} {math.log(r.mean_mise)!r}" for r in reports]
    Path(path).write_text("\n".join(lines) + "\n")
