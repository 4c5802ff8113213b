"""Backward variable selection driven by the permutation-free importance tau.

Each iteration recomputes tau for the still-selected variables on
distances restricted to them, records signs and ranks, and deletes the
variable with the largest tau unless every tau is negative (or the
optional significance checkpoint fires).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from joblib import Parallel, delayed

from .data import LabeledSample
from .dist import REFRESH_EVERY, euclidean, pair_sqdiffs, remove_variable, variable_sqdiffs
from .importance import tau
from .mrpp import GroupWeights, _resolve_weights, mrpp_test, pair_weight_matrix
from .perm import build_plan, derive_seed


class StopReason(str, Enum):
    ALL_NEGATIVE = "AllNegative"
    DELETED_SET_SIGNIFICANT = "DeletedSetSignificant"
    SIZE_FLOOR = "SizeFloor"


@dataclass
class IterationRecord:
    ell: int
    active_before: list
    tau: list
    dropped: int | None
    signs: list
    ranks: list
    checkpoint_p: float | None = None
    selected_p: float | None = None


@dataclass
class SelectionTrace:
    R: int
    variable_names: list
    iterations: list = field(default_factory=list)
    L: int = 0
    selected: list = field(default_factory=list)
    deleted: list = field(default_factory=list)
    stop_reason: StopReason | None = None
    params: dict = field(default_factory=dict)

    def signs_matrix(self) -> np.ndarray:
        return np.array([it.signs for it in self.iterations], dtype=int).reshape(-1, self.R)

    def ranks_matrix(self) -> np.ndarray:
        return np.array([it.ranks for it in self.iterations], dtype=int).reshape(-1, self.R)

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "variable_names": list(self.variable_names),
            "params": self.params,
            "iterations": [asdict(it) for it in self.iterations],
            "final": {
                "L": self.L,
                "selected": list(self.selected),
                "deleted": list(self.deleted),
                "stop_reason": self.stop_reason.value,
            },
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _ranks_with_frozen(t, active, deleted_at, R):
    """Ascending ordinal ranks of ``t`` on ``active``; deleted variables get
    ``R - ell_deleted + 1``."""
    ranks = np.zeros(R, dtype=int)
    order = np.argsort(t, kind="stable")
    ranks[np.asarray(active)[order]] = np.arange(1, len(active) + 1)
    for r, ell in deleted_at.items():
        ranks[r] = R - ell + 1
    return ranks


def backward_select(sample: LabeledSample, weights="nk", *, alpha: float = 0.05,
                    checkpoint: bool = False, budget: int = 1000, seed: int = 0,
                    min_selected: int = 2) -> SelectionTrace:
    """Run backward selection on ``sample`` and return the full trace.

    Parameters
    ----------
    sample : LabeledSample
    weights : {"nk", "nk-1"} or GroupWeights
        Group weights of the MRPP statistic.
    alpha : float
        Threshold for the deleted-set MRPP test (only with ``checkpoint``).
    checkpoint : bool
        Test the would-be deleted set before each deletion and stop when it
        is significant. Each test uses a fresh plan seeded by ``(seed, ell)``.
    budget : int
        Permutations per checkpoint test.
    min_selected : int
        Stop as soon as a deletion leaves fewer selected variables than
        this (at least 1).

    Returns
    -------
    SelectionTrace
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if min_selected < 1:
        raise ValueError("min_selected must be at least 1")
    labels = sample.labels
    w = _resolve_weights(labels, weights)
    R = sample.R
    trace = SelectionTrace(R, list(sample.variable_names), params={
        "weights": w.scheme.value, "alpha": alpha, "checkpoint": bool(checkpoint),
        "permutations": int(budget), "seed": int(seed), "min_selected": int(min_selected)})
    pd = euclidean(sample)
    deleted_at: dict[int, int] = {}
    for ell in range(1, R + 1):
        active = list(pd.active)
        t = tau(pd, labels, w).values
        signs = np.ones(R, dtype=int)
        signs[active] = np.where(t < 0, -1, 1)
        ranks = _ranks_with_frozen(t, active, deleted_at, R)
        j = int(np.argmax(t))
        rec = IterationRecord(ell, active, [float(v) for v in t], None,
                              signs.tolist(), ranks.tolist())
        trace.iterations.append(rec)
        if t[j] < 0:
            trace.stop_reason = StopReason.ALL_NEGATIVE
            break
        d = active[j]
        if checkpoint:
            plan = build_plan(labels, budget, derive_seed(seed, ell))
            cand = sorted([*deleted_at, d])
            rec.checkpoint_p = mrpp_test(euclidean(sample, cand), plan, w).p_value
            rec.selected_p = mrpp_test(pd, plan, w).p_value
            if rec.checkpoint_p < alpha:
                trace.stop_reason = StopReason.DELETED_SET_SIGNIFICANT
                break
        rec.dropped = d
        deleted_at[d] = ell
        if len(active) - 1 < min_selected:
            trace.stop_reason = StopReason.SIZE_FLOOR
            break
        pd = remove_variable(pd, variable_sqdiffs(sample, d))
    trace.L = len(trace.iterations)
    trace.selected = [r for r in range(R) if r not in deleted_at]
    trace.deleted = [r for r, _ in sorted(deleted_at.items(), key=lambda kv: kv[1])]
    return trace


def average_ranks(trace: SelectionTrace) -> np.ndarray:
    """Mean rank of every variable over the iterations; lower is more important."""
    return trace.ranks_matrix().mean(axis=0)


def important_by_sign(trace: SelectionTrace, delta: float = 0.8) -> list:
    """Variables whose tau was negative in at least a ``delta`` share of iterations."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    neg = (trace.signs_matrix() < 0).sum(axis=0)
    return [int(r) for r in np.flatnonzero(neg >= delta * trace.L - 1e-9)]


def top_by_average_rank(avg_ranks, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest average ranks, ties by index."""
    return np.sort(np.argsort(avg_ranks, kind="stable")[:k])


@dataclass(frozen=True)
class BatchSelection:
    """Per-assignment summaries from :func:`batched_selection`."""

    avg_ranks: np.ndarray     # (B, R)
    n_iter: np.ndarray        # (B,) L for each assignment
    n_selected: np.ndarray    # (B,) |S(L)|
    neg_counts: np.ndarray    # (B, R) iterations with negative tau


# assignments per lockstep block; fixed so float results never depend on workers
BATCH = 128


def batched_selection(values, assignments, weights: GroupWeights,
                      min_selected: int = 2, n_jobs: int = 1) -> BatchSelection:
    """Backward selection (checkpoint off) for many labelings at once.

    The data, hence every per-variable squared difference, is shared by
    all labelings; only the pair weights differ. Iterations run in
    lockstep over a block of labelings so that tau for every variable and
    labeling is a single ``(R, P) @ (P, b)`` product. Traces match
    :func:`backward_select` with ``checkpoint=False``.
    """
    assignments = np.atleast_2d(np.asarray(assignments))
    sqd = pair_sqdiffs(values)
    blocks = [assignments[s:s + BATCH] for s in range(0, assignments.shape[0], BATCH)]
    if n_jobs == 1 or len(blocks) == 1:
        parts = [_selection_block(sqd, a, weights, min_selected) for a in blocks]
    else:
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_selection_block)(sqd, a, weights, min_selected) for a in blocks)
    return BatchSelection(*(np.concatenate(x) for x in zip(*parts)))


def _ordinal_ranks(T):
    """Row-wise ascending ordinal ranks, ties by column index."""
    order = np.argsort(T, axis=1)
    srt = np.take_along_axis(T, order, axis=1)
    tie = (srt[:, 1:] == srt[:, :-1]) & np.isfinite(srt[:, 1:])
    if tie.any():
        # exact ties are rare; only then pay for the stable sort
        # (inf marks inactive entries whose order is irrelevant)
        order = np.argsort(T, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, T.shape[1] + 1)[None, :], axis=1)
    return ranks


def _selection_block(sqd, assignments, weights, min_selected):
    R, P = sqd.shape
    b = assignments.shape[0]
    # tau_r = sum_p sqd[r, p] * (within weight - 1/P) / (2 dist)
    half_c = 0.5 * (pair_weight_matrix(assignments, weights.pair_coefficients()) - 1.0 / P)
    SQ = np.repeat(sqd.sum(axis=0)[None, :], b, axis=0)
    active = np.ones((b, R), dtype=bool)
    deleted_at = np.zeros((b, R), dtype=int)
    rank_sum = np.zeros((b, R))
    neg = np.zeros((b, R), dtype=int)
    # identical columns must give bit-identical tau so ties break by index;
    # BLAS does not promise that across output columns, so multiply the
    # distinct rows only and expand
    uniq, inverse = np.unique(sqd, axis=0, return_inverse=True)
    uniq_t = np.ascontiguousarray(uniq.T)
    inverse = inverse.ravel()
    # results per original row; the working arrays only hold running rows
    out_rank = np.zeros((b, R))
    out_neg = np.zeros((b, R), dtype=int)
    out_iter = np.zeros(b, dtype=int)
    out_sel = np.zeros(b, dtype=int)
    rows = np.arange(b)
    V = np.empty_like(SQ)
    for ell in range(1, R + 1):
        m = rows.size
        # a pair at distance 0 has sqd = 0 in every active variable, so
        # clamping only keeps the product finite; its contribution stays 0
        np.maximum(SQ, 1e-300, out=V[:m])
        np.sqrt(V[:m], out=V[:m])
        np.divide(half_c, V[:m], out=V[:m])
        T = (V[:m] @ uniq_t)[:, inverse]
        ranks = _ordinal_ranks(np.where(active, T, np.inf))
        rank_sum += np.where(active, ranks, R - deleted_at + 1)
        neg += active & (T < 0)
        np.copyto(T, -np.inf, where=~active)
        j = np.argmax(T, axis=1)
        go = np.flatnonzero(T[np.arange(m), j] >= 0)
        active[go, j[go]] = False
        deleted_at[go, j[go]] = ell
        SQ[go] -= sqd[j[go]]
        if ell % REFRESH_EVERY == 0 and go.size:
            SQ[go] = active[go].astype(float) @ sqd
        stop = np.ones(m, dtype=bool)
        stop[go] = active[go].sum(axis=1) < min_selected
        if stop.any():
            done = rows[stop]
            out_rank[done] = rank_sum[stop] / ell
            out_neg[done] = neg[stop]
            out_iter[done] = ell
            out_sel[done] = active[stop].sum(axis=1)
            keep = ~stop
            if not keep.any():
                break
            rows, SQ, half_c, active = rows[keep], SQ[keep], half_c[keep], active[keep]
            deleted_at, rank_sum, neg = deleted_at[keep], rank_sum[keep], neg[keep]
    return out_rank, out_iter, out_sel, out_neg
