"""Gaussian sequence observations Y_j = theta_j + eps * xi_j.

The noise xi_j is a function of (seed, j) only: a splitmix64 hash of the
seed and the multi-index is mapped through the normal quantile function.
Two observations drawn with the same seed on overlapping index sets agree
on the overlap, and replicates can be generated in any order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .basis import (
    CoefficientMap,
    IndexBox,
    enumerate_indices,
    indices_with_small_support,
    read_coefficients_csv,
    write_coefficients_csv,
)
from .errors import DomainError, ParameterError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def index_noise(seed: int, indices: np.ndarray) -> np.ndarray:
    """Standard normal draws keyed by (seed, multi-index), one per row."""
    indices = np.asarray(indices, dtype=np.int64)
    n, d = indices.shape
    with np.errstate(over="ignore"):
        h = _mix(np.full(n, np.uint64(seed % 2**64)) + _GOLDEN)
        h = _mix(h ^ np.uint64(d))
        for c in range(d):
            # zigzag keeps small negative entries small
            col = indices[:, c]
            zz = ((col << 1) ^ (col >> 63)).astype(np.uint64)
            h = _mix(h + _GOLDEN * np.uint64(c + 1) + zz)
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"noise level must satisfy 0 < epsilon < 1, got {epsilon}")


@dataclass(frozen=True, eq=False)
class SequenceObservation:
    """Noisy coefficients on a finite, lexicographically ordered index set."""

    indices: np.ndarray  # (n, d) int64
    values: np.ndarray   # (n,)
    epsilon: float
    cutoff: int
    seed: int | None

    @property
    def d(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]

    def as_map(self) -> CoefficientMap:
        return CoefficientMap.from_arrays(self.indices, self.values)

    def metadata(self) -> str:
        return f"epsilon={self.epsilon!r}, cutoff={self.cutoff}, seed={self.seed}"


def observation_indices(d: int, cutoff: int, max_support: int | None = None,
                        box: IndexBox | None = None) -> np.ndarray:
    if box is not None:
        idx = enumerate_indices(box)
    elif max_support is None or max_support >= d:
        idx = enumerate_indices(IndexBox(d, cutoff))
    else:
        idx = indices_with_small_support(d, cutoff, max_support)
    return np.array(idx, dtype=np.int64).reshape(len(idx), d)


def observe(f: CoefficientMap, epsilon: float, box: IndexBox, seed: int,
            max_support: int | None = None, noise: np.ndarray | None = None) -> SequenceObservation:
    """Draw Y_j = theta_j[f] + eps xi_j for every j of ``box``.

    ``max_support`` further keeps only indices with at most that many
    nonzero entries (the indices any candidate with |V| <= s can use).
    ``noise`` overrides the generated xi (testing hook).
    """
    check_epsilon(epsilon)
    if box.cutoff < 1:
        raise DomainError("observation cutoff must be at least 1")
    if max_support is None or box.support_restriction is not None:
        idx = observation_indices(box.d, box.cutoff, box=box)
    else:
        idx = observation_indices(box.d, box.cutoff, max_support=max_support)
    theta = np.array([f.get(tuple(j)) for j in idx.tolist()], dtype=float)
    xi = index_noise(seed, idx) if noise is None else np.broadcast_to(np.asarray(noise, float), theta.shape)
    return SequenceObservation(idx, theta + epsilon * xi, float(epsilon), box.cutoff, seed)


def tail_energy(f: CoefficientMap, obs_indices: np.ndarray) -> float:
    """Sum of theta_j^2 over coefficients of ``f`` outside the observed index set."""
    inside = set(map(tuple, obs_indices.tolist()))
    return math.fsum(f[j] ** 2 for j in f if j not in inside)


def kl_divergence(f: CoefficientMap, g: CoefficientMap, epsilon: float) -> float:
    """KL(P_f, P_g) = ||f - g||^2 / (2 eps^2)."""
    return 0.5 * (f - g).sq_norm() / epsilon**2


def write_observation_csv(obs: SequenceObservation, path) -> None:
    write_coefficients_csv(obs.as_map(), path, value_column="y",
                           metadata=obs.metadata(), drop_zeros=False)


def read_observation_csv(path) -> SequenceObservation:
    coeffs, meta = read_coefficients_csv(path, value_column="y")
    fields = {}
    for part in (meta or "").split(","):
        k, _, v = part.strip().partition("=")
        if k:
            fields[k] = v
    if "epsilon" not in fields:
        raise DomainError(f"{path}: missing '# epsilon=...' metadata line")
    idx, vals = coeffs.to_arrays()
    seed = fields.get("seed", "None")
    return SequenceObservation(
        idx, vals, float(fields["epsilon"]),
        int(fields.get("cutoff", int(np.abs(idx).max(initial=0)))),
        None if seed == "None" else int(seed),
    )
