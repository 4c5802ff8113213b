"""Energy statistics and distance components (DISCO) with exponent 1.

All functions take a pairwise distance object accepted by
:func:`mrppsel.dist.as_condensed` and a vector of group codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import as_condensed, n_from_pairs, pair_index
from .mrpp import CHUNK, upper_tail_p
from .perm import PermutationPlan


def _block_sums(dv, labels):
    """``K x K`` matrix of summed distances over unordered pairs (i<j)
    with ``labels[i], labels[j]`` in the given groups; symmetric."""
    labels = np.asarray(labels)
    K = int(labels.max()) + 1
    iu, ju = pair_index(labels.size)
    flat = labels[iu] * K + labels[ju]
    sums = np.bincount(flat, weights=dv, minlength=K * K).reshape(K, K)
    return sums + sums.T - np.diag(np.diag(sums))


def _prepare(d, labels):
    dv = as_condensed(d)
    labels = np.asarray(labels)
    if n_from_pairs(dv.size) != labels.size:
        raise ValueError("labels and distances disagree on N")
    sizes = np.bincount(labels)
    if sizes.size == 0 or sizes.min() < 1:
        raise ValueError("every group must be nonempty")
    return dv, labels, sizes.astype(float)


def g_matrix(d, labels) -> np.ndarray:
    """All mean cross distances ``g(k, k')``; the diagonal counts ordered
    pairs including ``i == j`` (V-statistic form)."""
    dv, labels, n = _prepare(d, labels)
    S = _block_sums(dv, labels)
    S[np.diag_indices_from(S)] *= 2.0
    return S / np.outer(n, n)


def g_mean(d, labels, k: int, kk: int) -> float:
    """Mean distance between members of group ``k`` and group ``kk``."""
    return float(g_matrix(d, labels)[k, kk])


def two_sample_energy(d, labels, k: int = 0, kk: int = 1) -> float:
    """Two-sample energy statistic ``2 g(k,k') - g(k,k) - g(k',k')``."""
    g = g_matrix(d, labels)
    return float(2.0 * g[k, kk] - g[k, k] - g[kk, kk])


@dataclass(frozen=True)
class DiscoDecomposition:
    S: float
    W: float
    T: float
    F: float  # nan when undefined
    F_defined: bool


def _between(g, n):
    """``sum_{k<k'} (n_k + n_k')/N * d(k, k')`` from a matrix of mean distances."""
    N = n.sum()
    K = n.size
    S = 0.0
    for k in range(K):
        for kk in range(k + 1, K):
            d_kk = n[k] * n[kk] / (n[k] + n[kk]) * (2 * g[k, kk] - g[k, k] - g[kk, kk])
            S += (n[k] + n[kk]) / N * d_kk
    return float(S)


def disco(d, labels) -> DiscoDecomposition:
    """Between (S), within (W) and total (T) dispersion and the F ratio."""
    dv, labels, n = _prepare(d, labels)
    K, N = n.size, n.sum()
    if K < 2:
        raise ValueError("DISCO needs K >= 2")
    if N == K:
        raise ValueError("N = K leaves no within-group degrees of freedom")
    g = g_matrix(dv, labels)
    # (n_k + n_k')/(2N) weights make T = S + W hold exactly
    S = 0.5 * _between(g, n)
    W = float(np.sum(n / 2.0 * np.diag(g)))
    T = float(N / 2.0 * (2.0 * dv.sum() / N ** 2))
    defined = W > 0
    F = (S / (K - 1)) / (W / (N - K)) if defined else float("nan")
    return DiscoDecomposition(S, W, T, F, defined)


def s_u(d, labels) -> float:
    """Between-sample dispersion with unbiased (diagonal-free) within means."""
    dv, labels, n = _prepare(d, labels)
    if n.min() < 2:
        raise ValueError("every group needs n_k >= 2")
    g = g_matrix(dv, labels)
    sums = _block_sums(dv, labels)
    g[np.diag_indices_from(g)] = 2.0 * np.diag(sums) / (n * (n - 1))
    return _between(g, n)


@dataclass(frozen=True)
class PermutationTestResult:
    statistic: float
    perm_statistics: np.ndarray
    p_value: float


def _within_sums(dv, assignments, n):
    """``sum_k (1/n_k) * (sum of within-group distances of k)`` per assignment."""
    iu, ju = pair_index(assignments.shape[1])
    inv = 1.0 / n
    out = []
    for start in range(0, assignments.shape[0], CHUNK):
        a = assignments[start:start + CHUNK]
        li, lj = a[:, iu], a[:, ju]
        out.append(np.where(li == lj, inv[li], 0.0) @ dv)
    return np.concatenate(out)


def disco_statistics(d, plan: PermutationPlan) -> np.ndarray:
    """F ratio under every assignment of the plan (inf where W = 0)."""
    a = plan.assignments
    dv, _, n = _prepare(d, a[0])
    K, N = n.size, n.sum()
    if N == K:
        raise ValueError("N = K leaves no within-group degrees of freedom")
    T = dv.sum() / N
    W = _within_sums(dv, a, n)
    S = T - W
    with np.errstate(divide="ignore", invalid="ignore"):
        F = (S / (K - 1)) / (W / (N - K))
    # W = 0 under a permutation counts as maximally extreme
    return np.where(W > 0, F, np.inf)


def disco_test(d, plan: PermutationPlan) -> PermutationTestResult:
    """Permutation DISCO test; large F is evidence against equality."""
    F = disco_statistics(d, plan)
    if not np.isfinite(F[0]):
        # W = 0 observed: only possible when all distances vanish
        return PermutationTestResult(float("nan"), F, 1.0)
    return PermutationTestResult(float(F[0]), F, upper_tail_p(float(F[0]), F))


def energy_test(d, plan: PermutationPlan) -> PermutationTestResult:
    """Two-sample energy permutation test; large values are extreme."""
    a = plan.assignments
    dv, _, n = _prepare(d, a[0])
    if n.size != 2:
        raise ValueError("the energy test needs exactly K = 2 groups")
    # E = 2 g12 - g11 - g22 with the total sum fixed: g12 = (tot - w1 - w2)/(n1 n2)
    iu, ju = pair_index(a.shape[1])
    tot = dv.sum()
    out = []
    for start in range(0, a.shape[0], CHUNK):
        blk = a[start:start + CHUNK]
        li, lj = blk[:, iu], blk[:, ju]
        w1 = np.where((li == 0) & (lj == 0), 1.0, 0.0) @ dv
        w2 = np.where((li == 1) & (lj == 1), 1.0, 0.0) @ dv
        g12 = (tot - w1 - w2) / (n[0] * n[1])
        out.append(2 * g12 - 2 * w1 / n[0] ** 2 - 2 * w2 / n[1] ** 2)
    E = np.concatenate(out)
    return PermutationTestResult(float(E[0]), E, upper_tail_p(float(E[0]), E))
