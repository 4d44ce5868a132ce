"""Multi-indices and the tensor-product trigonometric basis on [0, 1]^d.

A multi-index is a plain tuple of ints.  Coordinate sets (supports of
atoms) are 1-based, so ``V = (1, 3)`` refers to the first and third
coordinates of a multi-index.

The one-dimensional system is

    phi_0(u) = 1,
    phi_k(u) = sqrt(2) cos(2 pi k u)     for k > 0,
    phi_k(u) = sqrt(2) sin(2 pi |k| u)   for k < 0,

and ``phi_j(x) = prod_l phi_{j_l}(x_l)``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DomainError

SQRT2 = math.sqrt(2.0)


def support(j: Iterable[int]) -> frozenset[int]:
    """1-based coordinates of the nonzero entries of ``j``."""
    return frozenset(i + 1 for i, v in enumerate(j) if v != 0)


def sup_norm(j: Iterable[int]) -> int:
    return max((abs(v) for v in j), default=0)


def is_zero(j: Iterable[int]) -> bool:
    return all(v == 0 for v in j)


def zero_index(d: int) -> tuple[int, ...]:
    return (0,) * d


@dataclass(frozen=True)
class IndexBox:
    """All j with supp(j) inside ``support_restriction`` and |j|_inf <= cutoff.

    ``support_restriction=None`` means no restriction (all d coordinates).
    """

    d: int
    cutoff: int
    support_restriction: tuple[int, ...] | None = None

    def coordinates(self) -> tuple[int, ...]:
        if self.support_restriction is None:
            return tuple(range(1, self.d + 1))
        return tuple(sorted(set(self.support_restriction)))

    def count(self) -> int:
        return (2 * self.cutoff + 1) ** len(self.coordinates())


def _check_box(box: IndexBox) -> None:
    if box.d < 1:
        raise DomainError(f"dimension must be positive, got d={box.d}")
    if box.cutoff < 0:
        raise DomainError(f"cutoff must be nonnegative, got {box.cutoff}")
    coords = box.coordinates()
    if len(coords) > box.d or any(c < 1 or c > box.d for c in coords):
        raise DomainError(
            f"support restriction {coords} is not a subset of {{1,...,{box.d}}}"
        )


def iter_indices(box: IndexBox) -> Iterator[tuple[int, ...]]:
    """Lexicographic stream over the box."""
    _check_box(box)
    coords = box.coordinates()
    base = [0] * box.d
    rng = range(-box.cutoff, box.cutoff + 1)
    # product over the restricted coordinates in increasing order is already
    # lexicographic in the full tuple, because untouched entries stay 0
    for values in itertools.product(rng, repeat=len(coords)):
        for c, v in zip(coords, values):
            base[c - 1] = v
        yield tuple(base)


def enumerate_indices(box: IndexBox) -> list[tuple[int, ...]]:
    return list(iter_indices(box))


def indices_with_small_support(d: int, cutoff: int, max_support: int) -> list[tuple[int, ...]]:
    """Every j with |j|_inf <= cutoff and |supp(j)| <= max_support, sorted."""
    if max_support < 0:
        raise DomainError("max_support must be nonnegative")
    out: set[tuple[int, ...]] = set()
    for size in range(0, min(max_support, d) + 1):
        for coords in itertools.combinations(range(1, d + 1), size):
            out.update(iter_indices(IndexBox(d, cutoff, coords)))
    return sorted(out)


def eval_basis_1d(k: int, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if k == 0:
        return np.ones_like(u)
    if k > 0:
        return SQRT2 * np.cos(2.0 * np.pi * k * u)
    return SQRT2 * np.sin(2.0 * np.pi * (-k) * u)


def eval_basis(j: Iterable[int], x) -> np.ndarray | float:
    """Evaluate phi_j at one point (shape (d,)) or many points (shape (n, d))."""
    j = tuple(j)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != len(j):
        raise DomainError(f"point dimension {pts.shape[1]} != index dimension {len(j)}")
    out = np.ones(pts.shape[0])
    for ell, k in enumerate(j):
        if k != 0:
            out = out * eval_basis_1d(k, pts[:, ell])
    return float(out[0]) if scalar else out


class CoefficientMap(Mapping):
    """Sparse map multi-index -> coefficient, all indices of a common length d.

    Iteration and serialization use lexicographic index order.
    """

    def __init__(self, d: int, coeffs: Mapping[tuple[int, ...], float] | None = None):
        self.d = int(d)
        self._c: dict[tuple[int, ...], float] = {}
        for j, v in (coeffs or {}).items():
            j = tuple(int(a) for a in j)
            if len(j) != self.d:
                raise DomainError(f"index {j} has length {len(j)}, expected {self.d}")
            self._c[j] = float(v)

    def __getitem__(self, j):
        return self._c[tuple(j)]

    def get(self, j, default=0.0):
        return self._c.get(tuple(j), default)

    def __iter__(self):
        return iter(sorted(self._c))

    def __len__(self):
        return len(self._c)

    def __repr__(self):
        return f"CoefficientMap(d={self.d}, n={len(self)})"

    def __eq__(self, other):
        if not isinstance(other, CoefficientMap):
            return NotImplemented
        return self.d == other.d and self._c == other._c

    def __add__(self, other: "CoefficientMap") -> "CoefficientMap":
        self._same_dim(other)
        out = dict(self._c)
        for j, v in other._c.items():
            out[j] = out.get(j, 0.0) + v
        return CoefficientMap(self.d, out)

    def __sub__(self, other: "CoefficientMap") -> "CoefficientMap":
        return self + other.scaled(-1.0)

    def scaled(self, a: float) -> "CoefficientMap":
        return CoefficientMap(self.d, {j: a * v for j, v in self._c.items()})

    def pruned(self) -> "CoefficientMap":
        """Drop exact zeros."""
        return CoefficientMap(self.d, {j: v for j, v in self._c.items() if v != 0.0})

    def restricted(self, keep) -> "CoefficientMap":
        return CoefficientMap(self.d, {j: v for j, v in self._c.items() if keep(j)})

    def sq_norm(self) -> float:
        """Squared L2 norm of the synthesized function (Parseval)."""
        return math.fsum(v * v for v in self._c.values())

    def _same_dim(self, other):
        if self.d != other.d:
            raise DomainError(f"dimension mismatch: {self.d} vs {other.d}")

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        keys = sorted(self._c)
        idx = np.array(keys, dtype=np.int64).reshape(len(keys), self.d)
        return idx, np.array([self._c[k] for k in keys], dtype=float)

    @classmethod
    def from_arrays(cls, indices, values) -> "CoefficientMap":
        indices = np.asarray(indices, dtype=np.int64)
        return cls(indices.shape[1], {tuple(map(int, j)): float(v) for j, v in zip(indices, values)})


def eval_function(coeffs: CoefficientMap, x) -> np.ndarray | float:
    """Synthesis sum f(x) = sum_j theta_j phi_j(x)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    pts = np.atleast_2d(x)
    total = np.zeros(pts.shape[0])
    for j in coeffs:
        total = total + coeffs[j] * eval_basis(j, pts)
    return float(total[0]) if scalar else total


def grid_sq_norm(coeffs: CoefficientMap, n: int = 256) -> float:
    """Midpoint-rule approximation of ||f||_2^2 on an n^d grid."""
    mids = (np.arange(n) + 0.5) / n
    pts = np.stack([g.ravel() for g in np.meshgrid(*[mids] * coeffs.d, indexing="ij")], axis=1)
    vals = eval_function(coeffs, pts)
    return float(np.mean(vals**2))


# --- CSV -------------------------------------------------------------------

def _header(d: int, value_column: str) -> list[str]:
    return [f"j_{i}" for i in range(1, d + 1)] + [value_column]


def write_coefficients_csv(coeffs: CoefficientMap, path, value_column: str = "theta",
                           metadata: str | None = None, drop_zeros: bool = True) -> None:
    buf = io.StringIO()
    if metadata is not None:
        buf.write(f"# {metadata}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(coeffs.d, value_column))
    for j in coeffs:
        v = coeffs[j]
        if drop_zeros and v == 0.0:
            continue
        w.writerow([*j, repr(v)])
    Path(path).write_text(buf.getvalue())


def read_coefficients_csv(path, value_column: str = "theta") -> tuple[CoefficientMap, str | None]:
    """Returns the map and the metadata comment line (without ``# ``), if any."""
    lines = Path(path).read_text().splitlines()
    meta = None
    if lines and lines[0].startswith("#"):
        meta = lines[0][1:].strip()
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows:
        raise DomainError(f"{path}: empty coefficient file")
    head = rows[0]
    if head[-1] != value_column or not all(h.startswith("j_") for h in head[:-1]):
        raise DomainError(f"{path}: unexpected header {head}")
    d = len(head) - 1
    coeffs = {tuple(int(a) for a in r[:d]): float(r[d]) for r in rows[1:] if r}
    return CoefficientMap(d, coeffs), meta
