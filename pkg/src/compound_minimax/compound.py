"""Compound functions f = mean + sum of atoms, each atom depending on few coordinates."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import (
    CoefficientMap,
    IndexBox,
    enumerate_indices,
    is_zero,
    read_coefficients_csv,
    sup_norm,
    support,
    write_coefficients_csv,
    zero_index,
)
from .errors import DomainError, StructureError

FAMILY_RULES = ("disjoint", "pairwise-overlap-at-most-one", "unrestricted")


def _canon(V) -> tuple[int, ...]:
    return tuple(sorted(int(c) for c in V))


def family_rule_holds(supports: Sequence[tuple[int, ...]], rule: str) -> bool:
    if rule == "unrestricted":
        return True
    sets = [set(V) for V in supports]
    if rule == "disjoint":
        return all(not (a & b) for a, b in itertools.combinations(sets, 2))
    if rule == "pairwise-overlap-at-most-one":
        for i, a in enumerate(sets):
            if sum(1 for k, b in enumerate(sets) if k != i and a & b) > 1:
                return False
        return True
    raise StructureError(f"unknown family rule {rule!r}; expected one of {FAMILY_RULES}")


@dataclass(frozen=True)
class Structure:
    """The supports V_1, ..., V_m of the atoms (1-based coordinate tuples)."""

    d: int
    supports: tuple[tuple[int, ...], ...]
    s: int
    family_rule: str = "disjoint"

    @property
    def m(self) -> int:
        return len(self.supports)

    def to_text(self) -> str:
        return "".join(",".join(map(str, V)) + "\n" for V in self.supports)


def make_structure(d: int, s: int, supports, family_rule: str = "disjoint") -> Structure:
    supports = [_canon(V) for V in supports]
    if not supports:
        raise StructureError("a structure needs at least one support")
    for V in supports:
        if any(c < 1 or c > d for c in V) or len(set(V)) != len(V):
            raise StructureError(f"support {V} is not a subset of {{1,...,{d}}}")
        if len(V) > s:
            raise StructureError(f"support {V} has size {len(V)} > s={s}")
    if len(set(supports)) != len(supports):
        raise StructureError(f"duplicate supports in {supports}")
    if family_rule not in FAMILY_RULES:
        raise StructureError(f"unknown family rule {family_rule!r}; expected one of {FAMILY_RULES}")
    if not family_rule_holds(supports, family_rule):
        raise StructureError(f"supports {supports} violate the {family_rule!r} family rule")
    return Structure(d, tuple(supports), s, family_rule)


def read_structure(path, d: int, s: int | None = None, family_rule: str = "unrestricted") -> tuple[Structure, float | None]:
    """Parse a structure file; a leading ``# mean=...`` line is returned as the mean."""
    mean = None
    supports = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line.startswith("#"):
            for part in line[1:].split(","):
                k, _, v = part.strip().partition("=")
                if k == "mean":
                    mean = float(v)
            continue
        if line:
            supports.append(tuple(int(c) for c in line.split(",")))
    if s is None:
        s = max(len(V) for V in supports)
    return make_structure(d, s, supports, family_rule), mean


@dataclass(frozen=True)
class SobolevBall:
    """W_V(beta, L): sum_j |j|_inf^{2 beta} theta_j^2 <= L over supp(j) in V."""

    d: int
    V: tuple[int, ...]
    beta: float
    L: float

    def form(self, coeffs: CoefficientMap) -> float:
        return sobolev_form(coeffs, self.beta)

    def contains(self, coeffs: CoefficientMap, rtol: float = 1e-12) -> bool:
        Vs = set(self.V)
        for j in coeffs:
            if coeffs[j] != 0.0 and (is_zero(j) or not support(j) <= Vs):
                return False
        return self.form(coeffs) <= self.L * (1.0 + rtol)


def sobolev_form(coeffs: CoefficientMap, beta: float) -> float:
    return math.fsum(sup_norm(j) ** (2.0 * beta) * coeffs[j] ** 2 for j in coeffs)


def sample_sobolev_atom(ball: SobolevBall, cutoff: int, rng: np.random.Generator,
                        fill: float = 1.0, decay: float = 0.0) -> CoefficientMap:
    """Random atom of W_V(beta, L) with Sobolev form exactly ``fill * L``.

    Proto-coefficients are i.i.d. standard normal, optionally damped by
    ``|j|_inf^{-decay}``, then rescaled onto the ellipsoid shell.
    """
    if cutoff < 1:
        raise DomainError("cutoff must be at least 1")
    if not 0.0 < fill <= 1.0:
        raise DomainError("fill ratio must lie in (0, 1]")
    idx = [j for j in enumerate_indices(IndexBox(ball.d, cutoff, ball.V)) if not is_zero(j)]
    if not idx:
        return CoefficientMap(ball.d)
    norms = np.array([sup_norm(j) for j in idx], dtype=float)
    proto = rng.standard_normal(len(idx)) * norms ** (-decay)
    form = float(np.sum(norms ** (2.0 * ball.beta) * proto**2))
    proto *= math.sqrt(fill * ball.L / form)
    return CoefficientMap(ball.d, dict(zip(idx, proto.tolist())))


def power_law_atom(ball: SobolevBall, cutoff: int, decay: float, fill: float = 1.0) -> CoefficientMap:
    """Deterministic atom theta_j = c |j|_inf^{-decay} for every nonzero j
    supported in V with |j|_inf <= cutoff, scaled so the form equals fill * L.

    With decay = beta + 1/2 and |V| = 1 the form sums |j|^{-1}, so the atom
    sits on the ellipsoid boundary with energy spread over all frequencies.
    """
    if cutoff < 1:
        raise DomainError("cutoff must be at least 1")
    if not 0.0 < fill <= 1.0:
        raise DomainError("fill ratio must lie in (0, 1]")
    idx = [j for j in enumerate_indices(IndexBox(ball.d, cutoff, ball.V)) if not is_zero(j)]
    if not idx:
        return CoefficientMap(ball.d)
    norms = np.array([sup_norm(j) for j in idx], dtype=float)
    proto = norms ** (-decay)
    proto *= math.sqrt(fill * ball.L / float(np.sum(norms ** (2.0 * ball.beta) * proto**2)))
    return CoefficientMap(ball.d, dict(zip(idx, proto.tolist())))


@dataclass(frozen=True)
class CompoundFunction:
    mean: float
    structure: Structure
    atoms: tuple[CoefficientMap, ...]
    smoothness: tuple[float, float] | None = None
    coefficients: CoefficientMap = field(default=None, compare=False)

    @property
    def d(self) -> int:
        return self.structure.d


def _check_atom(atom: CoefficientMap, V: tuple[int, ...]) -> None:
    Vs = set(V)
    for j in atom:
        if is_zero(j):
            raise StructureError("atoms must not carry the zero index (atoms have mean zero)")
        if not support(j) <= Vs:
            raise StructureError(f"atom index {j} has support outside {V}")


def flatten(mean: float, atoms: Sequence[CoefficientMap], d: int) -> CoefficientMap:
    out: dict[tuple[int, ...], float] = {zero_index(d): float(mean)}
    for atom in atoms:
        for j in atom:
            out[j] = out.get(j, 0.0) + atom[j]
    return CoefficientMap(d, out)


def compose(mean: float, structure: Structure, atoms: Sequence[CoefficientMap],
            smoothness: tuple[float, float] | None = None) -> CompoundFunction:
    """Build f = mean + sum_l f_l with the flattened coefficient map attached.

    ``atoms`` is either a sequence aligned with ``structure.supports`` or a
    dict keyed by support.
    """
    if isinstance(atoms, dict):
        extra = set(map(_canon, atoms)) - set(structure.supports)
        if extra:
            raise StructureError(f"atom supports {sorted(extra)} are not in the structure")
        atoms = [atoms.get(V, CoefficientMap(structure.d)) for V in structure.supports]
    atoms = tuple(atoms)
    if len(atoms) != structure.m:
        raise StructureError(f"expected {structure.m} atoms, got {len(atoms)}")
    for atom, V in zip(atoms, structure.supports):
        if atom.d != structure.d:
            raise StructureError("atom dimension does not match the structure")
        _check_atom(atom, V)
    coeffs = flatten(mean, atoms, structure.d)
    return CompoundFunction(float(mean), structure, atoms, smoothness, coeffs)


def verify_condition_3a(structure: Structure, atoms: Sequence[CoefficientMap]) -> float:
    """Ratio ||sum_l f_l||^2 / sum_l ||f_l||^2 (at most C_* under condition (3a))."""
    if len(atoms) != structure.m:
        raise StructureError(f"expected {structure.m} atoms, got {len(atoms)}")
    denom = math.fsum(a.sq_norm() for a in atoms)
    if denom == 0.0:
        raise DomainError("all atoms are zero; the ratio is undefined")
    total = flatten(0.0, atoms, structure.d)
    return total.sq_norm() / denom


# --- tensor-product class ---------------------------------------------------

@dataclass(frozen=True)
class TensorClass:
    A: frozenset[int]

    @property
    def k(self) -> int:
        return max(abs(a) for a in self.A)

    def admissible(self, V, d: int) -> list[tuple[int, ...]]:
        """Nonzero j in A^d with supp(j) inside V."""
        return tensor_indices(V, self.A, d)


def tensor_indices(V, A, d: int) -> list[tuple[int, ...]]:
    V = _canon(V)
    values = sorted(set(A) | {0})
    if 0 not in set(A):
        # entries outside V must be 0, so 0 has to be in A for any index to exist
        return []
    out = []
    for vals in itertools.product(values, repeat=len(V)):
        j = [0] * d
        for c, v in zip(V, vals):
            j[c - 1] = v
        if any(j):
            out.append(tuple(j))
    return sorted(out)


def make_tensor_atom(V, A, coefficients, d: int) -> CoefficientMap:
    A = set(A)
    V = _canon(V)
    atom = CoefficientMap(d, coefficients)
    for j in atom:
        bad = [v for v in j if v not in A]
        if bad:
            raise StructureError(f"index {j} uses entries {bad} outside A={sorted(A)}")
        if is_zero(j):
            raise StructureError("atoms must not carry the zero index")
        if not support(j) <= set(V):
            raise StructureError(f"index {j} has support outside {V}")
    return atom


# --- model bundle -----------------------------------------------------------

def write_bundle(f: CompoundFunction, directory) -> list[Path]:
    """Structure file (with the mean in its header) plus one CSV per atom."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "structure.txt"]
    paths[0].write_text(f"# mean={f.mean!r}\n" + f.structure.to_text())
    for ell, atom in enumerate(f.atoms, start=1):
        p = directory / f"atom_{ell}.csv"
        write_coefficients_csv(atom, p)
        paths.append(p)
    return paths


def read_bundle(directory, d: int) -> CompoundFunction:
    directory = Path(directory)
    structure, mean = read_structure(directory / "structure.txt", d)
    atoms = [read_coefficients_csv(directory / f"atom_{ell}.csv")[0]
             for ell in range(1, structure.m + 1)]
    return compose(mean or 0.0, structure, atoms)
