"""Projection estimators indexed by (bandwidths, structure) and their
exponentially weighted aggregate.

A candidate keeps Y_0 and, for every support V_l, the observed coefficients
Y_j with supp(j) inside V_l and 1 <= |j|_inf <= t_l.  Its aggregation weight
is proportional to

    exp{-(|Y - theta_hat|^2 + pen) / (4 eps^2)} * prior,

with pen = 2 eps^2 prod_l (2 t_l + 1)^{|V_l|}.  All weight arithmetic is
done in log space.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import logsumexp

from .basis import CoefficientMap
from .compound import FAMILY_RULES, Structure, family_rule_holds
from .errors import CapacityError, DomainError, ParameterError, StructureError
from .sequence import SequenceObservation

log = logging.getLogger(__name__)

DEFAULT_CEILING = 10**6
MASK_BUDGET = 5 * 10**7  # booleans held at once by exact_aggregate


@dataclass(frozen=True, order=True)
class Candidate:
    """Supports (sorted 1-based coordinate tuples) with one bandwidth each.

    The empty candidate is the constant estimator Y_0.
    """

    supports: tuple[tuple[int, ...], ...] = ()
    t: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.supports) != len(self.t):
            raise StructureError("one bandwidth per support is required")
        if any(b < 0 for b in self.t):
            raise DomainError("bandwidths must be nonnegative")

    @classmethod
    def from_pairs(cls, pairs) -> "Candidate":
        pairs = sorted((tuple(sorted(V)), int(b)) for V, b in pairs)
        return cls(tuple(V for V, _ in pairs), tuple(b for _, b in pairs))

    @classmethod
    def for_structure(cls, structure: Structure, t: Sequence[int]) -> "Candidate":
        return cls.from_pairs(zip(structure.supports, t))

    @property
    def m(self) -> int:
        return len(self.supports)

    @property
    def s(self) -> int:
        return max((len(V) for V in self.supports), default=0)

    def pairs(self) -> tuple[tuple[tuple[int, ...], int], ...]:
        return tuple(zip(self.supports, self.t))

    def label(self) -> str:
        if not self.supports:
            return "const"
        return ";".join("{" + ",".join(map(str, V)) + f"}}:{b}" for V, b in self.pairs())


# --- counting helpers used by the prior -------------------------------------

@lru_cache(maxsize=None)
def count_supports(d: int, s: int) -> int:
    """M_{d,s}: number of subsets of {1..d} of size at most s (empty set included)."""
    return sum(math.comb(d, k) for k in range(0, min(s, d) + 1))


def stratum_size(d: int, s: int, m: int) -> int:
    """|B_{s,m} minus B_{s-1,m}|: structures of m sets of size <= s with one of size s."""
    if s == 0:
        return 1 if m == 1 else 0
    return math.comb(count_supports(d, s), m) - math.comb(count_supports(d, s - 1), m)


@lru_cache(maxsize=None)
def prior_normalizer(d: int) -> float:
    """H_d = sum_{s=0}^d sum_{m=1}^{M_{d,s}} 2^{-sm}."""
    total = 1.0  # s = 0 contributes the single term m = 1
    for s in range(1, d + 1):
        r = 2.0**-s
        M = count_supports(d, s)
        total += r * (1.0 - r**M) / (1.0 - r)
    return total


def grid_size(epsilon: float, cutoff: int | None = None) -> int:
    """Number of bandwidth values: 1 + [eps^-2], or 1 + cutoff when the cutoff is smaller."""
    g = int(math.floor(epsilon**-2))
    if cutoff is not None and cutoff < g:
        log.info("prior grid uses cutoff %d in place of [eps^-2] = %d", cutoff, g)
        g = cutoff
    return 1 + g


def log_prior(cand: Candidate, d: int, epsilon: float | None = None,
              grid: int | None = None) -> float:
    """log pi_{t,eta}; ``grid`` overrides 1 + [eps^-2]."""
    H = prior_normalizer(d)
    if cand.m == 0:
        return -math.log(H)
    if grid is None:
        if epsilon is None:
            raise DomainError("either epsilon or an explicit grid size is required")
        grid = grid_size(epsilon)
    s, m = cand.s, cand.m
    return -(s * m * math.log(2.0) + math.log(H) + m * math.log(grid)
             + math.log(stratum_size(d, s, m)))


def penalty(cand: Candidate, epsilon: float) -> float:
    prod = 1
    for V, b in cand.pairs():
        prod *= (2 * b + 1) ** len(V)
    return 2.0 * epsilon**2 * prod


# --- candidate spaces -------------------------------------------------------

@dataclass(frozen=True)
class CandidateSpace:
    """Constant estimator plus every structure of 1..m_max distinct nonempty
    supports of size <= s_max obeying ``family_rule``, each with bandwidths
    in {0..cutoff}."""

    d: int
    s_max: int
    cutoff: int
    m_max: int | None = None
    family_rule: str = "unrestricted"

    def __post_init__(self):
        if not 1 <= self.s_max <= self.d:
            raise DomainError(f"s_max must lie in [1, d], got {self.s_max}")
        if self.cutoff < 0:
            raise DomainError("cutoff must be nonnegative")
        if self.family_rule not in FAMILY_RULES:
            raise StructureError(f"unknown family rule {self.family_rule!r}")

    def support_sets(self) -> list[tuple[int, ...]]:
        out = []
        for k in range(1, self.s_max + 1):
            out.extend(itertools.combinations(range(1, self.d + 1), k))
        return sorted(out)

    @property
    def max_supports(self) -> int:
        n = len(self.support_sets())
        return n if self.m_max is None else min(self.m_max, n)

    def structures(self) -> Iterator[tuple[tuple[int, ...], ...]]:
        sets = self.support_sets()
        for m in range(1, self.max_supports + 1):
            for combo in itertools.combinations(sets, m):
                if family_rule_holds(combo, self.family_rule):
                    yield combo

    def size(self, ceiling: int | None = None) -> int:
        """Number of candidates; stops early with CapacityError past ``ceiling``."""
        total = 1
        for combo in self.structures():
            total += (self.cutoff + 1) ** len(combo)
            if ceiling is not None and total > ceiling:
                raise CapacityError(
                    f"candidate space exceeds the exact-aggregation ceiling of {ceiling}; "
                    "use the MCMC approximation instead")
        return total

    def candidates(self, ceiling: int | None = DEFAULT_CEILING) -> list[Candidate]:
        self.size(ceiling)
        out = [Candidate()]
        grid = range(self.cutoff + 1)
        for combo in self.structures():
            for t in itertools.product(grid, repeat=len(combo)):
                out.append(Candidate(combo, t))
        return out


# --- projection estimates ---------------------------------------------------

class IndexLayout:
    """Support bitmasks and sup-norms of an observation's index set."""

    def __init__(self, indices: np.ndarray):
        self.indices = np.asarray(indices, dtype=np.int64)
        nz = self.indices != 0
        weights = (1 << np.arange(self.indices.shape[1], dtype=np.int64))
        self.supp = (nz * weights).sum(axis=1)
        self.linf = np.abs(self.indices).max(axis=1) if self.indices.size else np.zeros(0, np.int64)
        self.zero = self.linf == 0

    @staticmethod
    def bits(V) -> int:
        return sum(1 << (c - 1) for c in V)

    def kept(self, cand: Candidate) -> np.ndarray:
        mask = self.zero.copy()
        for V, b in cand.pairs():
            if b < 1:
                continue
            inside = (self.supp & ~self.bits(V)) == 0
            mask |= inside & (self.linf >= 1) & (self.linf <= b)
        return mask


def projection_estimate(obs: SequenceObservation, cand: Candidate,
                        layout: IndexLayout | None = None) -> CoefficientMap:
    if any(b > obs.cutoff for b in cand.t):
        raise DomainError(f"bandwidths {cand.t} exceed the observation cutoff {obs.cutoff}")
    layout = layout or IndexLayout(obs.indices)
    keep = layout.kept(cand)
    return CoefficientMap.from_arrays(obs.indices[keep], obs.values[keep])


def _log_target(obs: SequenceObservation, layout: IndexLayout, cand: Candidate,
                grid: int, y2: np.ndarray) -> tuple[float, float, float, float]:
    """(log weight, residual, penalty, log prior) of one candidate."""
    eps2 = obs.epsilon**2
    # the residual is the energy of the dropped coordinates; Y_0 is never dropped
    resid = float(y2[~layout.kept(cand)].sum())
    pen = penalty(cand, obs.epsilon)
    lp = log_prior(cand, obs.d, grid=grid)
    return -(resid + pen) / (4.0 * eps2) + lp, resid, pen, lp


@dataclass
class WeightedEnsemble:
    candidates: list[Candidate]
    log_weights: np.ndarray
    residuals: np.ndarray = field(repr=False)
    penalties: np.ndarray = field(repr=False)
    log_priors: np.ndarray = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def argmax(self) -> Candidate:
        # np.argmax returns the first maximizer, i.e. the earliest in candidate order
        return self.candidates[int(np.argmax(self.log_weights))]

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["candidate_id", "m", "s_max", "t_vector", "log_weight"])
        for i, (c, lw) in enumerate(zip(self.candidates, self.log_weights)):
            w.writerow([i, c.m, c.s, c.label(), repr(float(lw))])
        Path(path).write_text(buf.getvalue())


def resolve_grid(obs: SequenceObservation, grid: int | None) -> int:
    return grid if grid is not None else grid_size(obs.epsilon, obs.cutoff)


def exact_aggregate(obs: SequenceObservation, candidates: Sequence[Candidate],
                    grid: int | None = None) -> tuple[WeightedEnsemble, CoefficientMap]:
    """Exponentially weighted aggregate over an explicit candidate list."""
    candidates = list(candidates)
    if not candidates:
        raise DomainError("the candidate set is empty")
    grid = resolve_grid(obs, grid)
    layout = IndexLayout(obs.indices)
    y2 = obs.values**2
    n = len(candidates)
    # keep the masks only while they fit comfortably; otherwise recompute them
    store = n * len(obs) <= MASK_BUDGET
    masks = np.zeros((n, len(obs)), dtype=bool) if store else None
    lw = np.empty(n)
    resid = np.empty(n)
    pen = np.empty(n)
    lp = np.empty(n)
    for i, c in enumerate(candidates):
        if any(b > obs.cutoff for b in c.t):
            raise DomainError(f"bandwidths {c.t} exceed the observation cutoff {obs.cutoff}")
        if store:
            masks[i] = layout.kept(c)
        lw[i], resid[i], pen[i], lp[i] = _log_target(obs, layout, c, grid, y2)
    lw = lw - logsumexp(lw)
    w = np.exp(lw)
    if store:
        keep_prob = w @ masks
    else:
        keep_prob = np.zeros(len(obs))
        for wi, c in zip(w, candidates):
            keep_prob[layout.kept(c)] += wi
    theta = keep_prob * obs.values
    est = CoefficientMap.from_arrays(obs.indices, theta).pruned()
    return WeightedEnsemble(candidates, lw, resid, pen, lp), est


# --- known-structure bandwidths --------------------------------------------

def lemma1_bandwidth(beta: float, L: float, epsilon: float, atom_size: int,
                     cutoff: int | None = None) -> int:
    """t = [(L / (3^|V| eps^2))^{1/(2 beta + |V|)} min eps^-2], clamped to ``cutoff``."""
    if beta <= 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    if L < epsilon**2:
        raise ParameterError(f"the bandwidth rule requires L >= eps^2 ({L} < {epsilon**2})")
    if math.log(epsilon**-2) < math.log(L) / (2.0 * beta):
        raise ParameterError(
            f"the bandwidth rule requires log(eps^-2) >= log(L)/(2 beta) "
            f"({math.log(epsilon**-2):.6g} < {math.log(L) / (2 * beta):.6g})")
    raw = (L / (3.0**atom_size * epsilon**2)) ** (1.0 / (2.0 * beta + atom_size))
    t = int(math.floor(min(raw, epsilon**-2)))
    if cutoff is not None:
        t = min(t, cutoff)
    return t


def lemma1_candidate(structure: Structure, beta: float, L: float, epsilon: float,
                     cutoff: int | None = None) -> Candidate:
    t = [lemma1_bandwidth(beta, L, epsilon, len(V), cutoff) for V in structure.supports]
    return Candidate.for_structure(structure, t)


def lemma1_risk_bound(beta: float, L: float, epsilon: float, s: int, m: int,
                      c_star: float = 1.0) -> float:
    """2 C_* 3^{min(2 beta, s)} m L^{s/(2beta+s)} eps^{4 beta/(2 beta+s)}."""
    return (2.0 * c_star * 3.0 ** min(2.0 * beta, s) * m
            * L ** (s / (2 * beta + s)) * epsilon ** (4 * beta / (2 * beta + s)))


# --- Metropolis-Hastings approximation --------------------------------------

@dataclass(frozen=True)
class McmcConfig:
    """Chain length (including burn-in), burn-in, move probabilities and seed.

    Moves: ``p_resample`` replaces one support by a uniformly drawn set,
    ``p_birth_death`` adds or removes a support, ``p_bandwidth`` moves one
    bandwidth by +-1 (a step outside [0, cutoff] proposes the current state).
    """

    steps: int = 110_000
    burn_in: int = 10_000
    p_resample: float = 1 / 3
    p_birth_death: float = 1 / 3
    p_bandwidth: float = 1 / 3
    seed: int = 0
    batches: int = 50

    def __post_init__(self):
        probs = (self.p_resample, self.p_birth_death, self.p_bandwidth)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise DomainError(f"move probabilities must be nonnegative and sum to 1, got {probs}")
        if self.burn_in < 0:
            raise DomainError("burn-in must be nonnegative")
        if self.steps - self.burn_in < 1:
            raise DomainError("no chain steps remain after burn-in")


@dataclass
class McmcResult:
    estimate: CoefficientMap
    visits: dict[Candidate, int]
    acceptance_rate: float
    stderr: np.ndarray = field(repr=False)  # batch-means stderr per observed index
    config: McmcConfig = None

    def frequencies(self) -> dict[Candidate, float]:
        n = sum(self.visits.values())
        return {c: k / n for c, k in self.visits.items()}

    def l2_stderr(self) -> float:
        return float(math.sqrt(np.sum(self.stderr**2)))


def mcmc_aggregate(obs: SequenceObservation, config: McmcConfig, space: CandidateSpace,
                   grid: int | None = None, start: Candidate | None = None) -> McmcResult:
    """Metropolis-Hastings over ``space`` targeting the aggregation weights;
    returns the post-burn-in average of the visited projection estimates."""
    if space.d != obs.d:
        raise DomainError("candidate space and observation dimensions differ")
    if space.cutoff > obs.cutoff:
        raise DomainError("candidate bandwidths may exceed the observation cutoff")
    grid = resolve_grid(obs, grid)
    layout = IndexLayout(obs.indices)
    y2 = obs.values**2
    sets = space.support_sets()
    n_sets = len(sets)
    n_t = space.cutoff + 1
    m_max = space.max_supports
    log_birth = math.log(n_sets * n_t)
    rule = space.family_rule

    cache: dict[tuple, float] = {}
    ids: dict[tuple, int] = {}

    def target(state: tuple) -> float:
        v = cache.get(state)
        if v is None:
            cand = Candidate.from_pairs(state)
            v = _log_target(obs, layout, cand, grid, y2)[0]
            cache[state] = v
        return v

    def valid(state: tuple) -> bool:
        if rule == "unrestricted":
            return True
        return family_rule_holds([V for V, _ in state], rule)

    state = (start or Candidate()).pairs()
    cur = target(state)
    rng = np.random.default_rng(config.seed)
    c1 = config.p_resample
    c2 = c1 + config.p_birth_death
    n_steps = config.steps
    trace = np.empty(n_steps - config.burn_in, dtype=np.int64)
    accepted = 0
    k = 0
    chunk = 65_536
    while k < n_steps:
        u = rng.random((min(chunk, n_steps - k), 5))
        for row in u:
            m = len(state)
            prop = None  # None: the move proposes the current state or leaves the space
            lq = 0.0
            if row[0] < c1:
                if m:
                    ell = int(row[1] * m)
                    W = sets[int(row[2] * n_sets)]
                    if all(V != W for V, _ in state):
                        prop = tuple(sorted(state[:ell] + ((W, state[ell][1]),) + state[ell + 1:]))
            elif row[0] < c2:
                if row[1] < 0.5:
                    if m < m_max:
                        W = sets[int(row[2] * n_sets)]
                        if all(V != W for V, _ in state):
                            prop = tuple(sorted(state + ((W, int(row[3] * n_t)),)))
                            lq = log_birth - math.log(m + 1)
                elif m:
                    ell = int(row[2] * m)
                    prop = state[:ell] + state[ell + 1:]
                    lq = math.log(m) - log_birth
            elif m:
                ell = int(row[1] * m)
                nb = state[ell][1] + (1 if row[2] < 0.5 else -1)
                if 0 <= nb <= space.cutoff:
                    prop = state[:ell] + ((state[ell][0], nb),) + state[ell + 1:]
            if prop is not None and valid(prop):
                new = target(prop)
                if math.log(row[4]) < new - cur + lq:
                    state, cur = prop, new
                    accepted += 1
            if k >= config.burn_in:
                sid = ids.get(state)
                if sid is None:
                    sid = ids[state] = len(ids)
                trace[k - config.burn_in] = sid
            k += 1
    states = sorted(ids, key=ids.get)
    masks = np.array([layout.kept(Candidate.from_pairs(s)) for s in states], dtype=float)
    counts = np.bincount(trace, minlength=len(states))
    n_kept = trace.size
    theta = (counts @ masks) / n_kept * obs.values
    # batch means
    nb = max(2, min(config.batches, n_kept))
    bsize = n_kept // nb
    used = trace[: nb * bsize]
    bc = np.zeros((nb, len(states)))
    np.add.at(bc, (np.repeat(np.arange(nb), bsize), used), 1.0)
    bmeans = (bc @ masks) / bsize * obs.values
    stderr = bmeans.std(axis=0, ddof=1) / math.sqrt(nb)
    visits = {Candidate.from_pairs(s): int(c) for s, c in zip(states, counts)}
    est = CoefficientMap.from_arrays(obs.indices, theta).pruned()
    return McmcResult(est, visits, accepted / n_steps, stderr, config)
