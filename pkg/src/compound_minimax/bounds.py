"""Combinatorial counts, partition packings, Varshamov-Gilbert codes and the
function families used by the lower-bound arguments.

Counting is exact (Python ints); comparisons of counts against the
analytic bounds use a relative tolerance of 1e-9.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .aggregation import count_supports, prior_normalizer
from .basis import CoefficientMap, sup_norm
from .compound import CompoundFunction, compose, make_structure, sobolev_form
from .errors import CapacityError, DomainError, ParameterError
from .sequence import kl_divergence

REL_TOL = 1e-9
ENUMERATION_CEILING = 10**7
VG_MAX_LENGTH = 24


def leq(a: float, b: float, rtol: float = REL_TOL) -> bool:
    return a <= b + rtol * max(abs(a), abs(b))


# --- counting ---------------------------------------------------------------

def count_M(d: int, s: int) -> tuple[int, float]:
    """M_{d,s} = sum_{l<=s} C(d, l) together with the bound (e d / s)^s."""
    if not 0 <= s <= d:
        raise DomainError(f"need 0 <= s <= d, got s={s}, d={d}")
    bound = 1.0 if s == 0 else (math.e * d / s) ** s
    return count_supports(d, s), bound


def all_supports(d: int, s: int) -> list[tuple[int, ...]]:
    """V_s^d including the empty set."""
    return [V for k in range(s + 1) for V in itertools.combinations(range(1, d + 1), k)]


def count_B(d: int, s: int, m: int, ceiling: int = ENUMERATION_CEILING) -> int:
    """|B^d_{s,m}| by exhaustive enumeration of m-subsets of V_s^d."""
    sets = all_supports(d, s)
    if math.comb(len(sets), m) > ceiling:
        raise CapacityError(f"|B^{d}_{{{s},{m}}}| exceeds the enumeration ceiling {ceiling}")
    return sum(1 for _ in itertools.combinations(sets, m))


def B_bound(d: int, s: int, m: int) -> float:
    """(e^2 d / (s m^{1/s}))^{ms}."""
    return (math.e**2 * d / (s * m ** (1.0 / s))) ** (m * s)


def H(d: int) -> float:
    return prior_normalizer(d)


# --- partitions -------------------------------------------------------------

Partition = tuple[tuple[int, ...], ...]


def partition_count(d: int, s: int, m: int) -> int:
    """C(d, ms) (ms)! / ((s!)^m m!)."""
    if m * s > d:
        raise DomainError(f"need ms <= d, got m={m}, s={s}, d={d}")
    return math.comb(d, m * s) * math.factorial(m * s) // (math.factorial(s) ** m * math.factorial(m))


def _split(elems: tuple[int, ...], s: int) -> Iterator[Partition]:
    if not elems:
        yield ()
        return
    first, rest = elems[0], elems[1:]
    for others in itertools.combinations(rest, s - 1):
        block = (first,) + others
        remaining = tuple(e for e in rest if e not in others)
        for tail in _split(remaining, s):
            yield (block,) + tail


def iter_partitions(d: int, s: int, m: int) -> Iterator[Partition]:
    """Canonical partitions: blocks sorted internally and by minimum element."""
    if m * s > d:
        raise DomainError(f"need ms <= d, got m={m}, s={s}, d={d}")
    for chosen in itertools.combinations(range(1, d + 1), m * s):
        yield from _split(chosen, s)


def enumerate_partitions(d: int, s: int, m: int, ceiling: int = ENUMERATION_CEILING) -> list[Partition]:
    n = partition_count(d, s, m)
    if n > ceiling:
        raise CapacityError(f"|P^{d}_{{{s},{m}}}| = {n} exceeds the enumeration ceiling {ceiling}")
    return list(iter_partitions(d, s, m))


def lemma2_bounds(d: int, s: int, m: int) -> tuple[float, float]:
    """s^{-(m-1)/2} (d/(s m^{1/s}))^{ms} and (e^2 d/(s m^{1/s}))^{ms}."""
    base = d / (s * m ** (1.0 / s))
    return s ** (-(m - 1) / 2) * base ** (m * s), (math.e**2 * base) ** (m * s)


def rho(p: Partition, q: Partition) -> float:
    """Fraction of blocks of ``p`` that are not blocks of ``q``."""
    if len(p) != len(q) or {len(b) for b in p} != {len(b) for b in q}:
        raise DomainError("partitions of different shapes")
    qs = set(q)
    return sum(1 for b in p if b not in qs) / len(p)


@dataclass(frozen=True)
class PackingSet:
    elements: tuple[Partition, ...]
    theta: float

    @property
    def log_size(self) -> float:
        return math.log(len(self.elements))


def greedy_packing(d: int, s: int, m: int, theta: float,
                   ceiling: int = ENUMERATION_CEILING) -> PackingSet:
    """First-fit theta-separated subset of P^d_{s,m} in canonical order.

    First-fit over the full enumeration is maximal by construction;
    :func:`is_maximal_packing` re-checks it independently.
    """
    if not 0.0 < theta <= 1.0:
        raise DomainError(f"separation must lie in (0, 1], got {theta}")
    parts = enumerate_partitions(d, s, m, ceiling)
    chosen: list[Partition] = []
    chosen_sets: list[set] = []
    # rho(p, q) >= theta  <=>  shared blocks <= m (1 - theta)
    max_shared = m * (1.0 - theta) + 1e-12
    for p in parts:
        if all(len(q.intersection(p)) <= max_shared for q in chosen_sets):
            chosen.append(p)
            chosen_sets.append(set(p))
    return PackingSet(tuple(chosen), theta)


def is_separated(packing: PackingSet) -> bool:
    return all(rho(p, q) >= packing.theta - 1e-12
               for p, q in itertools.combinations(packing.elements, 2))


def is_maximal_packing(packing: PackingSet, d: int, s: int, m: int) -> bool:
    members = set(packing.elements)
    for p in iter_partitions(d, s, m):
        if p in members:
            continue
        if all(rho(p, q) >= packing.theta - 1e-12 for q in packing.elements):
            return False
    return True


def lemma3_bound(d: int, s: int, m: int) -> float:
    """-m log(8 e^{7/8} s^{1/2} / 7) + (ms/3) log(d / (s m^{1/s})), valid for theta <= 1/8."""
    return (-m * math.log(8 * math.exp(7 / 8) * math.sqrt(s) / 7)
            + (m * s / 3) * math.log(d / (s * m ** (1.0 / s))))


# --- Varshamov-Gilbert ------------------------------------------------------

@dataclass(frozen=True)
class HypercubeCode:
    words: np.ndarray  # (K, n) uint8
    min_distance: int

    @property
    def n(self) -> int:
        return self.words.shape[1]

    def __len__(self) -> int:
        return self.words.shape[0]

    def pairwise_distances(self) -> np.ndarray:
        """Dense Hamming distance matrix (small codes only)."""
        w = self.words.astype(np.int64)
        return np.abs(w[:, None, :] - w[None, :, :]).sum(axis=2)

    def as_integers(self) -> np.ndarray:
        return (self.words.astype(np.int64) << np.arange(self.n)).sum(axis=1)

    def exhaustive_min_distance(self, block: int = 2048) -> int:
        """Minimum pairwise Hamming distance, blockwise over all pairs."""
        ints = self.as_integers()
        best = self.n
        for start in range(0, len(ints) - 1, block):
            head = ints[start:start + block]
            x = head[:, None] ^ ints[None, start + 1:]
            dist = _popcount(x)
            # mask pairs (i, k) with k <= i inside the leading square
            rows = np.arange(len(head))[:, None]
            cols = np.arange(x.shape[1])[None, :]
            dist = np.where(cols >= rows, dist, self.n + 1)
            if dist.size:
                best = min(best, int(dist.min()))
        return best


def _popcount(x: np.ndarray) -> np.ndarray:
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(x.astype(np.uint64)).astype(np.int64)
    x = x.astype(np.uint64)
    out = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        out += (x & np.uint64(1)).astype(np.int64)
        x >>= np.uint64(1)
    return out


def varshamov_gilbert(n: int, max_length: int = VG_MAX_LENGTH) -> HypercubeCode:
    """Greedy lexicographic code of length n with distance >= ceil(n/8).

    Words are scanned in increasing integer order starting from 0; a word is
    kept when it is not within distance ceil(n/8) - 1 of a kept word.
    """
    if n < 1:
        raise DomainError("code length must be positive")
    if n > max_length:
        raise CapacityError(f"code length {n} exceeds the exhaustive ceiling {max_length}")
    dmin = math.ceil(n / 8)
    # xor offsets of every pattern of weight < dmin
    offsets = np.array([sum(1 << i for i in c) for r in range(dmin)
                        for c in itertools.combinations(range(n), r)], dtype=np.int64)
    covered = np.zeros(1 << n, dtype=bool)
    kept = []
    pos = 0
    size = 1 << n
    while pos < size:
        nxt = int(np.argmin(covered[pos:])) + pos
        if covered[nxt]:
            break
        kept.append(nxt)
        covered[nxt ^ offsets] = True
        pos = nxt + 1
    words = ((np.array(kept, dtype=np.int64)[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    return HypercubeCode(words, dmin)


# --- lower-bound families ---------------------------------------------------

def prop1_parameters(epsilon: float, beta: float, s: int) -> tuple[int, float]:
    """t = [4 eps^{-2/(2 beta + s)}] and gamma with gamma^-2 = (2t+1)^{2beta+s} + 64 eps^-2 / log 2."""
    t = int(math.floor(4 * epsilon ** (-2 / (2 * beta + s))))
    gamma = ((2 * t + 1) ** (2 * beta + s) + 64 * epsilon**-2 / math.log(2)) ** -0.5
    return t, gamma


def cube_indices(t: int, s: int, d: int) -> list[tuple[int, ...]]:
    """The set I = {k in Z^s : |k|_inf <= t}, embedded in the first s coordinates."""
    if s > d:
        raise DomainError("s exceeds d")
    return [k + (0,) * (d - s) for k in itertools.product(range(-t, t + 1), repeat=s)]


@dataclass
class Prop1Family:
    gamma: float
    t: int
    s: int
    beta: float
    code: HypercubeCode
    index_set: list[tuple[int, ...]]
    members: list[CompoundFunction]


def prop1_family(gamma: float, t: int, s: int, beta: float, d: int,
                 max_length: int = VG_MAX_LENGTH) -> Prop1Family:
    """f_omega = gamma sum_{k in I} omega_k phi_k(x_1..x_s) for the words of a VG code on I."""
    if t < 4:
        raise ParameterError(f"the construction needs t >= 4, got t={t}")
    if gamma**2 * (2 * t + 1) ** (2 * beta + s) > 1.0:
        raise ParameterError("membership condition gamma^2 (2t+1)^{2 beta + s} <= 1 is violated")
    I = cube_indices(t, s, d)
    code = varshamov_gilbert(len(I), max_length)
    V = tuple(range(1, s + 1))
    structure = make_structure(d, s, [V])
    zero = (0,) * d
    members = []
    for w in code.words:
        coeffs = {k: gamma for k, bit in zip(I, w) if bit}
        mean = coeffs.pop(zero, 0.0)
        members.append(compose(mean, structure, [CoefficientMap(d, coeffs)], smoothness=(beta, 1.0)))
    return Prop1Family(gamma, t, s, beta, code, I, members)


def prop1_kl_budget(family: Prop1Family, epsilon: float) -> tuple[float, float]:
    """Average KL(P_f, P_0) over the family and the budget log|Omega| / 16."""
    d = family.members[0].d
    zero = CoefficientMap(d)
    avg = math.fsum(kl_divergence(f.coefficients, zero, epsilon) for f in family.members) / len(family.members)
    return avg, math.log(len(family.members)) / 16


def prop2_tau(epsilon: float, m: int, s: int, K: int, L: float) -> float:
    """(1/4) min(eps sqrt(ms log 2 + log K), sqrt(L))."""
    return 0.25 * min(epsilon * math.sqrt(m * s * math.log(2) + math.log(K)), math.sqrt(L))


@dataclass(frozen=True)
class Prop2Member:
    k: int
    signs: tuple[int, ...]  # one sign per coordinate covered by the partition, in coordinate order
    partition: Partition
    coefficients: CoefficientMap

    def sign_of(self, coord: int) -> int:
        covered = sorted(c for b in self.partition for c in b)
        return self.signs[covered.index(coord)]


def prop2_member(tau: float, partition: Partition, signs: Sequence[int], d: int, k: int = 0) -> Prop2Member:
    """(tau / sqrt(m)) sum_{V in partition} prod_{j in V} phi_{omega_j}(x_j)."""
    m = len(partition)
    covered = sorted(c for b in partition for c in b)
    if len(signs) != len(covered) or any(x not in (-1, 1) for x in signs):
        raise DomainError("need one sign in {-1, 1} per covered coordinate")
    sign = dict(zip(covered, signs))
    coeffs = {}
    for V in partition:
        j = [0] * d
        for c in V:
            j[c - 1] = sign[c]
        coeffs[tuple(j)] = tau / math.sqrt(m)
    return Prop2Member(k, tuple(signs), partition, CoefficientMap(d, coeffs))


def prop2_family(tau: float, packing: PackingSet, d: int,
                 ceiling: int = ENUMERATION_CEILING) -> list[Prop2Member]:
    """All f_{k,omega}, omega in {-1,1}^{ms}, for every partition of the packing."""
    if not packing.elements:
        raise DomainError("empty packing")
    ms = sum(len(b) for b in packing.elements[0])
    total = len(packing.elements) * 2**ms
    if total > ceiling:
        raise CapacityError(f"family of {total} functions exceeds the ceiling {ceiling}")
    out = []
    for k, part in enumerate(packing.elements):
        for signs in itertools.product((-1, 1), repeat=ms):
            out.append(prop2_member(tau, part, signs, d, k))
    return out


def prop2_sq_distance(a: Prop2Member, b: Prop2Member, tau: float) -> float:
    """Closed form: 2 tau^2 (1 - (#shared blocks with equal signs) / m)."""
    m = len(a.partition)
    agree = sum(1 for V in a.partition if V in b.partition
                and all(a.sign_of(c) == b.sign_of(c) for c in V))
    return 2 * tau**2 * (1 - agree / m)


def signs_agree_on_shared(a: Prop2Member, b: Prop2Member) -> bool:
    return all(a.sign_of(c) == b.sign_of(c) for V in a.partition if V in b.partition for c in V)


# --- verification reports ---------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float
    passed: bool


def _chk(name, lhs, rhs, ok) -> Check:
    return Check(name, float(lhs), float(rhs), bool(ok))


def combinatorics_checks(d_max: int = 8, b_dims: tuple[int, int, int] = (6, 2, 3),
                         h_max: int = 50) -> list[Check]:
    """Partition counts and their two-sided bounds for d <= d_max, counting bounds on
    M and B for d <= b_dims[0], s <= b_dims[1], m <= b_dims[2], and H_d <= e."""
    out = []
    for d in range(1, d_max + 1):
        for s in range(1, d + 1):
            for m in range(1, d // s + 1):
                n_enum = sum(1 for _ in iter_partitions(d, s, m))
                closed = partition_count(d, s, m)
                lo, hi = lemma2_bounds(d, s, m)
                tag = f"d={d},s={s},m={m}"
                out.append(_chk(f"partition_count[{tag}]", n_enum, closed, n_enum == closed))
                out.append(_chk(f"lemma2_lower[{tag}]", lo, n_enum, leq(lo, n_enum)))
                out.append(_chk(f"lemma2_upper[{tag}]", n_enum, hi, leq(n_enum, hi)))
    dB, sB, mB = b_dims
    for d in range(1, dB + 1):
        for s in range(0, min(sB, d) + 1):
            M, bound = count_M(d, s)
            M_enum = len(all_supports(d, s))
            out.append(_chk(f"M_count[d={d},s={s}]", M_enum, M, M_enum == M))
            if s >= 1:
                out.append(_chk(f"M_bound[d={d},s={s}]", M, bound, leq(M, bound)))
            for m in range(1, mB + 1):
                if s == 0 or m > M:
                    continue
                nB = count_B(d, s, m)
                out.append(_chk(f"B_binomial[d={d},s={s},m={m}]", nB, math.comb(M, m), nB == math.comb(M, m)))
                out.append(_chk(f"B_bound[d={d},s={s},m={m}]", nB, B_bound(d, s, m), leq(nB, B_bound(d, s, m))))
    for d in range(1, h_max + 1):
        out.append(_chk(f"H_d<=e[d={d}]", H(d), math.e, H(d) <= math.e))
    return out


def packing_checks(d: int, s: int, m: int, theta: float = 1 / 8) -> list[Check]:
    tag = f"d={d},s={s},m={m},theta={theta:g}"
    pk = greedy_packing(d, s, m, theta)
    out = [
        _chk(f"packing_separated[{tag}]", min((rho(p, q) for p, q in itertools.combinations(pk.elements, 2)),
                                             default=1.0), theta, is_separated(pk)),
        _chk(f"packing_maximal[{tag}]", len(pk.elements), len(pk.elements), is_maximal_packing(pk, d, s, m)),
    ]
    if theta <= 1 / 8:
        b = lemma3_bound(d, s, m)
        out.append(_chk(f"lemma3[{tag}]", b, pk.log_size, leq(b, pk.log_size)))
    return out


def vg_checks(n: int = 9) -> list[Check]:
    code = varshamov_gilbert(n)
    dmin = code.exhaustive_min_distance()
    return [
        _chk(f"vg_size[n={n}]", 2 ** (n / 8), len(code), len(code) >= 2 ** (n / 8)),
        _chk(f"vg_min_distance[n={n}]", dmin, math.ceil(n / 8), dmin >= math.ceil(n / 8)),
        _chk(f"vg_zero_word[n={n}]", 0, int(code.words[0].sum()), not code.words[0].any()),
    ]


def prop1_checks(epsilon: float = 0.8, beta: float = 1.0, s: int = 1, d: int = 1) -> list[Check]:
    t, gamma = prop1_parameters(epsilon, beta, s)
    fam = prop1_family(gamma, t, s, beta, d)
    words = fam.code.words.astype(np.int64)
    worst = 0.0
    for a, b in itertools.combinations(range(len(fam.members)), 2):
        lhs = (fam.members[a].coefficients - fam.members[b].coefficients).sq_norm()
        rhs = gamma**2 * int(np.abs(words[a] - words[b]).sum())
        worst = max(worst, abs(lhs - rhs))
    norm_err = max(abs(f.coefficients.sq_norm() - gamma**2 * int(w.sum())) for f, w in zip(fam.members, words))
    member = max(sobolev_form(f.coefficients, beta) for f in fam.members)
    avg_kl, budget = prop1_kl_budget(fam, epsilon)
    tag = f"eps={epsilon:g},beta={beta:g},s={s},t={t}"
    return [
        _chk(f"prop1_distance_law[{tag}]", worst, 1e-12, worst <= 1e-12),
        _chk(f"prop1_norm_law[{tag}]", norm_err, 1e-12, norm_err <= 1e-12),
        _chk(f"prop1_sobolev_membership[{tag}]", member, 1.0, leq(member, 1.0)),
        _chk(f"prop1_kl_budget[{tag}]", avg_kl, budget, avg_kl <= budget),
    ]


def prop2_checks(d: int, s: int, m: int, epsilon: float = 0.1, L: float = 1.0,
                 theta: float = 1 / 8, max_members: int = 4096) -> list[Check]:
    pk = greedy_packing(d, s, m, theta)
    K = len(pk.elements)
    tau = prop2_tau(epsilon, m, s, K, L)
    fam = prop2_family(tau, pk, d)
    if len(fam) > max_members:
        step = len(fam) // max_members + 1
        fam = fam[::step]
    zero = CoefficientMap(d)
    ident_err = 0.0
    formula_err = 0.0
    lower_ok = True
    for a, b in itertools.combinations(fam, 2):
        sq = (a.coefficients - b.coefficients).sq_norm()
        formula_err = max(formula_err, abs(sq - prop2_sq_distance(a, b, tau)))
        r = rho(a.partition, b.partition)
        lower_ok &= leq(2 * tau**2 * r, sq)
        if a.k != b.k and signs_agree_on_shared(a, b):
            ident_err = max(ident_err, abs(sq - 2 * tau**2 * r))
    kl_err = max(abs(kl_divergence(f.coefficients, zero, epsilon) - tau**2 / (2 * epsilon**2)) for f in fam)
    sob = max(sobolev_form(f.coefficients, 1.0) for f in fam)
    tag = f"d={d},s={s},m={m},eps={epsilon:g}"
    budget = (m * s * math.log(2) + math.log(K)) / 16
    return [
        _chk(f"prop2_distance_identity[{tag}]", ident_err, 1e-12, ident_err <= 1e-12),
        _chk(f"prop2_distance_formula[{tag}]", formula_err, 1e-12, formula_err <= 1e-12),
        _chk(f"prop2_separation[{tag}]", float(lower_ok), 1.0, lower_ok),
        _chk(f"prop2_kl_identity[{tag}]", kl_err, 1e-12, kl_err <= 1e-12),
        _chk(f"prop2_sobolev_membership[{tag}]", sob, L, leq(sob, L)),
        _chk(f"prop2_kl_budget[{tag}]", tau**2 / (2 * epsilon**2), budget,
             tau**2 / (2 * epsilon**2) <= budget),
    ]


def write_checks_csv(checks: Sequence[Check], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check_name", "lhs", "rhs", "passed"])
    for c in checks:
        w.writerow([c.name, repr(c.lhs), repr(c.rhs), str(c.passed).lower()])
    Path(path).write_text(buf.getvalue())


def write_packing(packing: PackingSet, path) -> None:
    """One partition per line, blocks as comma-separated coordinates joined by '|'."""
    lines = ["|".join(",".join(map(str, b)) for b in p) for p in packing.elements]
    Path(path).write_text("\n".join(lines) + "\n")


def write_code(code: HypercubeCode, path) -> None:
    lines = ["".join(map(str, w.tolist())) for w in code.words]
    Path(path).write_text("\n".join(lines) + "\n")
