"""MRPP statistic, permutation p-value and the closed-form permutation mean."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dist import PairDistances, as_condensed, pair_index
from .perm import PermutationPlan

# relative tolerance (to max |z|) under which two statistics count as tied
TIE_RTOL = 1e-10
# permutations evaluated per block, fixed so results never depend on workers
CHUNK = 128


class WeightScheme(str, Enum):
    NK_OVER_N = "nk"
    NK1_OVER_NK = "nk-1"


@dataclass(frozen=True)
class GroupWeights:
    """Group weights ``C_k`` for sizes ``n_1..n_K``."""

    scheme: WeightScheme
    values: tuple
    sizes: tuple

    @classmethod
    def from_sizes(cls, sizes, scheme="nk") -> "GroupWeights":
        scheme = WeightScheme(scheme)
        sizes = tuple(int(n) for n in sizes)
        N, K = sum(sizes), len(sizes)
        if scheme is WeightScheme.NK_OVER_N:
            vals = tuple(n / N for n in sizes)
        else:
            if N == K:
                raise ValueError("(n_k-1)/(N-K) weights need N > K")
            vals = tuple((n - 1) / (N - K) for n in sizes)
        return cls(scheme, vals, sizes)

    def pair_coefficients(self) -> np.ndarray:
        """Per-group multiplier ``C_k * 2 / (n_k (n_k - 1))`` of a within pair."""
        n = np.asarray(self.sizes, dtype=float)
        return np.asarray(self.values) * 2.0 / (n * (n - 1))


def group_weights(labels, scheme="nk") -> GroupWeights:
    sizes = np.bincount(np.asarray(labels))
    if sizes.size and sizes.min() < 2:
        raise ValueError("every group needs n_k >= 2")
    return GroupWeights.from_sizes(sizes.tolist(), scheme)


def _resolve_weights(labels, weights) -> GroupWeights:
    if weights is None or isinstance(weights, (str, WeightScheme)):
        return group_weights(labels, weights or "nk")
    return weights


def pair_weight_matrix(assignments, coefs) -> np.ndarray:
    """``(B, P)`` matrix whose row ``b`` turns a pairwise vector into ``z_b``."""
    a = np.atleast_2d(np.asarray(assignments))
    iu, ju = pair_index(a.shape[1])
    li, lj = a[:, iu], a[:, ju]
    return np.where(li == lj, np.asarray(coefs)[li], 0.0)


def z_statistic(d, labels, weights=None) -> float:
    """Weighted mean within-group distance for one labeling.

    ``d`` is a :class:`~mrppsel.dist.PairDistances`, a square pairwise
    matrix or a condensed pair vector.
    """
    labels = np.asarray(labels)
    w = _resolve_weights(labels, weights)
    sizes = np.bincount(labels, minlength=len(w.sizes))
    if sizes.min() < 2:
        raise ValueError("every group needs n_k >= 2")
    if tuple(sizes) != w.sizes:
        raise ValueError("labels do not match the group sizes of the weights")
    dv = as_condensed(d)
    return float(pair_weight_matrix(labels, w.pair_coefficients())[0] @ dv)


def z_statistics(d, assignments, weights=None) -> np.ndarray:
    """Statistic under every assignment, accepts ``(P,)`` or ``(M, P)`` input.

    Returns shape ``(B,)`` or ``(M, B)``.
    """
    if isinstance(assignments, PermutationPlan):
        assignments = assignments.assignments
    assignments = np.atleast_2d(assignments)
    w = _resolve_weights(assignments[0], weights)
    coefs = w.pair_coefficients()
    N = assignments.shape[1]
    dv = d.dist if isinstance(d, PairDistances) else np.asarray(d, float)
    if dv.shape == (N, N):
        dv = as_condensed(dv)
    out = []
    for start in range(0, assignments.shape[0], CHUNK):
        W = pair_weight_matrix(assignments[start:start + CHUNK], coefs)
        out.append(dv @ W.T)
    return np.concatenate(out, axis=-1)


def permutation_mean(d) -> float:
    """Mean of the statistic over all label permutations.

    Equals the grand mean of all pairwise entries, whatever the group
    sizes or weight scheme.
    """
    dv = as_condensed(d)
    return float(dv.sum() / dv.size) if dv.size else 0.0


def lower_tail_p(z0: float, z: np.ndarray) -> float:
    """Fraction of ``z`` at or below ``z0``, with round-off ties counted."""
    z = np.asarray(z)
    tol = TIE_RTOL * max(float(np.max(np.abs(z))), abs(z0))
    return float(np.count_nonzero(z <= z0 + tol) / z.size)


def upper_tail_p(t0: float, t: np.ndarray) -> float:
    """Fraction of ``t`` at or above ``t0``, with round-off ties counted."""
    t = np.asarray(t)
    finite = t[np.isfinite(t)]
    scale = max(float(np.max(np.abs(finite))) if finite.size else 0.0,
                abs(t0) if np.isfinite(t0) else 0.0)
    return float(np.count_nonzero(t >= t0 - TIE_RTOL * scale) / t.size)


@dataclass(frozen=True)
class MrppResult:
    z0: float
    z_perm: np.ndarray
    p_value: float

    @property
    def B(self) -> int:
        return self.z_perm.size


def mrpp_test(d, plan: PermutationPlan, weights=None) -> MrppResult:
    """Permutation test; small statistics are evidence of group differences."""
    z = z_statistics(d, plan.assignments, weights)
    if z.ndim != 1:
        raise ValueError("mrpp_test takes a single pairwise vector")
    return MrppResult(float(z[0]), z, lower_tail_p(float(z[0]), z))


def check_plan(plan: PermutationPlan, N: int):
    if plan.assignments.shape[1] != N:
        raise ValueError(f"plan is for N={plan.assignments.shape[1]}, data has N={N}")


__all__ = [
    "WeightScheme", "GroupWeights", "group_weights", "pair_weight_matrix",
    "z_statistic", "z_statistics", "permutation_mean", "lower_tail_p",
    "upper_tail_p", "MrppResult", "mrpp_test",
]
