"""Variable importance from weighted-distance perturbations.

Negative importance means up-weighting the variable makes the groups look
more different (smaller MRPP statistic / p-value), i.e. the variable is
important.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from .dist import PairDistances, gradient_distances, pair_sqdiffs
from .mrpp import (
    GroupWeights,
    _resolve_weights,
    lower_tail_p,
    pair_weight_matrix,
    z_statistics,
)
from .perm import PermutationPlan

_SQRT_2PI = np.sqrt(2.0 * np.pi)
PHI0 = 1.0 / _SQRT_2PI


def _phi(u):
    return np.exp(-0.5 * u * u) / _SQRT_2PI


class Measure(str, Enum):
    TAU = "tau"
    IOTA = "iota"
    BACKWARD = "drop1"
    FORWARD = "add1"
    CENTRAL = "central"
    GRAD_P = "gradp"


class BandwidthRule(str, Enum):
    CURVATURE_MAX = "curvature"
    SSE_BACKWARD = "sse-backward"
    SSE_FORWARD = "sse-forward"
    SSE_CENTRAL = "sse-central"
    SSE_BOTH = "sse-both"


@dataclass(frozen=True)
class ImportanceVector:
    measure: Measure
    values: np.ndarray
    variables: tuple  # column indices, aligned with values

    def ranks(self) -> np.ndarray:
        """Rank 1 for the smallest (most important) value, ties by position."""
        order = np.argsort(self.values, kind="stable")
        r = np.empty(order.size, dtype=int)
        r[order] = np.arange(1, order.size + 1)
        return r


@dataclass(frozen=True)
class KernelPValue:
    h: float
    p_tilde: float
    z0: float
    z_perm: np.ndarray


def kernel_p(z0: float, z_perm, h: float) -> KernelPValue:
    """Gaussian-kernel smoothed permutation CDF evaluated at ``z0``."""
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    z_perm = np.asarray(z_perm, dtype=float)
    if z_perm.size < 2:
        raise ValueError("need at least two permutation statistics")
    p = float(np.mean(ndtr((z0 - z_perm) / h)))
    return KernelPValue(float(h), p, float(z0), z_perm)


def tau(pd: PairDistances, labels, weights=None) -> ImportanceVector:
    """Observed statistic on each gradient distance minus its permutation mean.

    Needs no permutations: the permutation mean is the grand pairwise mean,
    so the cost is one pass over the pairs per variable.
    """
    labels = np.asarray(labels)
    w = _resolve_weights(labels, weights)
    if np.bincount(labels).min() < 2:
        raise ValueError("every group needs n_k >= 2")
    grads = gradient_distances(pd)
    within = pair_weight_matrix(labels, w.pair_coefficients())[0]
    within = within - 1.0 / max(grads.shape[1], 1)
    # duplicate variables must tie exactly (selection breaks ties by index),
    # which BLAS does not promise across rows
    uniq, inverse = np.unique(grads, axis=0, return_inverse=True)
    vals = (uniq @ within)[inverse.ravel()]
    return ImportanceVector(Measure.TAU, vals, tuple(pd.active))


class PermutationState:
    """Permutation statistics shared by the kernel-based measures.

    Built once per (distances, plan, weights); every variable reuses the
    same plan so cross-variable comparisons carry no extra permutation noise.
    """

    def __init__(self, pd: PairDistances, plan: PermutationPlan, weights=None):
        if plan.assignments.shape[1] != pd.N:
            raise ValueError("plan and distances disagree on N")
        self.pd = pd
        self.plan = plan
        self.weights: GroupWeights = _resolve_weights(plan.observed, weights)

    def _z(self, d):
        return z_statistics(d, self.plan.assignments, self.weights)

    @cached_property
    def z(self) -> np.ndarray:
        """``z_b`` under the full distance, shape ``(B,)``."""
        return self._z(self.pd.dist)

    @cached_property
    def z_grad(self) -> np.ndarray:
        """``z_b`` under each gradient distance, shape ``(A, B)``."""
        return self._z(gradient_distances(self.pd))

    @cached_property
    def _sqd(self):
        return pair_sqdiffs(self.pd.values, self.pd.active)

    def _perturbed(self, sign):
        sq = np.maximum(self.pd.sqdist[None, :] + sign * self._sqd, 0.0)
        z = self._z(np.sqrt(sq))
        # a constant variable leaves the distance unchanged; keep it bit-exact
        z[~self._sqd.any(axis=1)] = self.z
        return z

    @cached_property
    def z_drop(self) -> np.ndarray:
        return self._perturbed(-1.0)

    @cached_property
    def z_add(self) -> np.ndarray:
        return self._perturbed(1.0)

    @property
    def variables(self):
        return tuple(self.pd.active)

    # kernel quantities as functions of h

    def p_tilde(self, h, z=None) -> np.ndarray:
        z = self.z if z is None else z
        return np.mean(ndtr((z[..., :1] - z) / h), axis=-1)

    def iota(self, h) -> np.ndarray:
        z = self.z
        k = _phi((z[0] - z) / h)
        diff = self.z_grad[:, :1] - self.z_grad
        return diff @ k / (z.size * h)

    def finite_diffs(self, h):
        """Backward, forward and central differences of smoothed p-values."""
        p0 = self.p_tilde(h)
        pm = self.p_tilde(h, self.z_drop)
        pp = self.p_tilde(h, self.z_add)
        return p0 - pm, pp - p0, 0.5 * (pp - pm)

    def curvature(self, h) -> float:
        """Sum over permutations of the squared kernel density slope."""
        z = self.z
        u = (z[:, None] - z[None, :]) / h
        slope = np.mean(-u * _phi(u), axis=1) / h ** 2
        return float(np.sum(slope ** 2))

    def sse(self, h, rule: BandwidthRule) -> float:
        io = self.iota(h)
        back, fwd, cen = self.finite_diffs(h)
        if rule is BandwidthRule.SSE_BACKWARD:
            return float(np.sum((io - back) ** 2))
        if rule is BandwidthRule.SSE_FORWARD:
            return float(np.sum((io - fwd) ** 2))
        if rule is BandwidthRule.SSE_CENTRAL:
            return float(np.sum((io - cen) ** 2))
        if rule is BandwidthRule.SSE_BOTH:
            return float(np.sum((io - back) ** 2) + np.sum((io - fwd) ** 2))
        raise ValueError(f"{rule} is not an SSE rule")

    def objective(self, h, rule) -> float:
        rule = BandwidthRule(rule)
        if rule is BandwidthRule.CURVATURE_MAX:
            return self.curvature(h)
        return self.sse(h, rule)


def iota(pd: PairDistances, plan: PermutationPlan, weights=None, h: float = None,
         state: PermutationState = None) -> ImportanceVector:
    """Derivative of the kernel-smoothed p-value in each variable weight."""
    if h is None or not h > 0:
        raise ValueError("bandwidth h must be positive")
    state = state or PermutationState(pd, plan, weights)
    return ImportanceVector(Measure.IOTA, state.iota(h), state.variables)


_KINDS = {"backward": 0, "drop1": 0, "forward": 1, "add1": 1, "central": 2}


def finite_diff_importance(pd: PairDistances, plan: PermutationPlan, weights=None,
                           h: float = None, kind: str = "central",
                           state: PermutationState = None) -> ImportanceVector:
    """Drop-1 (backward), add-1 (forward) or central secant approximations."""
    if h is None or not h > 0:
        raise ValueError("bandwidth h must be positive")
    if kind not in _KINDS:
        raise ValueError(f"unknown finite-difference kind {kind!r}")
    state = state or PermutationState(pd, plan, weights)
    which = _KINDS[kind]
    measure = (Measure.BACKWARD, Measure.FORWARD, Measure.CENTRAL)[which]
    return ImportanceVector(measure, state.finite_diffs(h)[which], state.variables)


def grad_p_value(grad, plan: PermutationPlan, weights=None) -> float:
    """MRPP p-value with a gradient distance used as the pairwise measure."""
    z = z_statistics(np.asarray(grad, float), plan.assignments, weights)
    return lower_tail_p(float(z[0]), z)


def grad_p_values(pd: PairDistances, plan: PermutationPlan, weights=None,
                  state: PermutationState = None) -> ImportanceVector:
    state = state or PermutationState(pd, plan, weights)
    zg = state.z_grad
    vals = np.array([lower_tail_p(float(row[0]), row) for row in zg])
    return ImportanceVector(Measure.GRAD_P, vals, state.variables)


@dataclass(frozen=True)
class BandwidthChoice:
    h: float
    rule: BandwidthRule
    objective: float
    grid: np.ndarray
    objectives: np.ndarray
    degenerate: bool = False


GRID_POINTS = 61
GRID_SPAN = (1e-3, 1e3)


def bandwidth_grid(z_perm) -> np.ndarray:
    sd = float(np.std(z_perm, ddof=1))
    return sd * np.logspace(np.log10(GRID_SPAN[0]), np.log10(GRID_SPAN[1]), GRID_POINTS)


def select_bandwidth(pd: PairDistances, plan: PermutationPlan, weights=None,
                     rule="sse-both", state: PermutationState = None) -> BandwidthChoice:
    """Grid search for the kernel bandwidth.

    The curvature rule maximizes the summed squared density slope at the
    permutation statistics; the SSE rules minimize the squared distance
    between the derivative measure and its secant approximations.
    """
    rule = BandwidthRule(rule)
    state = state or PermutationState(pd, plan, weights)
    z = state.z
    if np.ptp(z) <= 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        warnings.warn("permutation statistics are all equal; falling back to h = 1")
        return BandwidthChoice(1.0, rule, float("nan"), np.array([1.0]),
                               np.array([np.nan]), degenerate=True)
    grid = bandwidth_grid(z)
    obj = np.array([state.objective(h, rule) for h in grid])
    best = int(np.argmax(obj) if rule is BandwidthRule.CURVATURE_MAX else np.argmin(obj))
    return BandwidthChoice(float(grid[best]), rule, float(obj[best]), grid, obj)
