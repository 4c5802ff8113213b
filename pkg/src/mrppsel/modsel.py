"""Modified MRPP: backward selection rerun inside every permutation.

The statistic for each labeling is the MRPP statistic on the ``R0``
variables with the smallest average rank in that labeling's own
selection trace, so every permutation compares vectors of the same
dimension.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from joblib import Parallel, delayed

from .data import LabeledSample, standardize
from .dist import pair_sqdiffs
from .mrpp import CHUNK, _resolve_weights, lower_tail_p, pair_weight_matrix
from .perm import build_plan
from .select import (
    average_ranks,
    backward_select,
    batched_selection,
    important_by_sign,
    top_by_average_rank,
)


class R0Kind(str, Enum):
    FROM_SL = "sl"
    FROM_SIGN = "sign"
    FIXED = "fixed"
    SQRT = "sqrt"


@dataclass(frozen=True)
class R0Rule:
    """How many variables enter the statistic.

    ``param`` is the sign proportion for ``sign`` and the count for
    ``fixed``; unused otherwise.
    """

    kind: R0Kind
    param: float | None = None

    def __post_init__(self):
        kind = R0Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is R0Kind.FROM_SIGN:
            if self.param is None or not 0 < self.param <= 1:
                raise ValueError("sign rule needs a proportion in (0, 1]")
        elif kind is R0Kind.FIXED:
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise ValueError("fixed rule needs an integer k >= 1")
            object.__setattr__(self, "param", int(self.param))
        elif self.param is not None:
            raise ValueError(f"rule {kind.value!r} takes no parameter")

    def __str__(self):
        if self.param is None:
            return self.kind.value
        return f"{self.kind.value}:{self.param:g}"


def parse_r0_rule(text) -> R0Rule:
    """Parse ``sl``, ``sign:<delta>``, ``fixed:<k>`` or ``sqrt``."""
    if isinstance(text, R0Rule):
        return text
    kind, _, arg = str(text).strip().lower().partition(":")
    try:
        kind = R0Kind(kind)
    except ValueError:
        raise ValueError(f"unknown R0 rule {text!r}; use sl, sign:<delta>, fixed:<k> or sqrt") from None
    if kind in (R0Kind.FROM_SIGN, R0Kind.FIXED):
        if not arg:
            raise ValueError(f"rule {kind.value!r} needs a value, e.g. {kind.value}:2")
        try:
            val = float(arg)
        except ValueError:
            raise ValueError(f"bad value {arg!r} in R0 rule") from None
        return R0Rule(kind, val)
    if arg:
        raise ValueError(f"rule {kind.value!r} takes no value")
    return R0Rule(kind)


def sqrt_r0(R: int) -> int:
    """``round(sqrt(R))``, at least 1."""
    return max(1, int(math.floor(math.sqrt(R) + 0.5)))


def resolve_r0(rule: R0Rule, trace, R: int):
    """Return ``(R0, fallback)``; falls back to :func:`sqrt_r0` when the
    rule yields an empty set."""
    rule = parse_r0_rule(rule)
    if rule.kind is R0Kind.SQRT:
        k = sqrt_r0(R)
    elif rule.kind is R0Kind.FIXED:
        k = rule.param
    elif rule.kind is R0Kind.FROM_SL:
        k = len(trace.selected)
    else:
        k = len(important_by_sign(trace, rule.param))
    if k < 1:
        return sqrt_r0(R), True
    return min(int(k), R), False


@dataclass(frozen=True)
class ModifiedMrppResult:
    p_bs: float
    R0: int
    rule: str
    selected_vars_observed: list
    permutations: int
    seed: int
    fallback: bool
    z0: float
    z_perm: np.ndarray

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("z_perm")
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def subset_statistics(sqd, masks, assignments, weights) -> np.ndarray:
    """MRPP statistic of labeling ``b`` on the variables in ``masks[b]``."""
    coefs = weights.pair_coefficients()
    out = np.empty(assignments.shape[0])
    for s in range(0, assignments.shape[0], CHUNK):
        m = masks[s:s + CHUNK].astype(float)
        dist = np.sqrt(np.maximum(m @ sqd, 0.0))
        W = pair_weight_matrix(assignments[s:s + CHUNK], coefs)
        out[s:s + CHUNK] = np.einsum("bp,bp->b", W, dist)
    return out


def modified_mrpp_rules(sample: LabeledSample, rules, weights="nk", budget: int = 1000,
                        seed: int = 0, plan=None, n_jobs: int = 1) -> list:
    """Modified MRPP for several ``R0`` rules sharing one selection pass.

    The observed trace and the per-permutation average ranks do not depend
    on ``R0``, so they are computed once.
    """
    if budget < 2:
        raise ValueError("need at least 2 permutations")
    rules = [parse_r0_rule(r) for r in rules]
    s = standardize(sample)
    w = _resolve_weights(s.labels, weights)
    R = s.R
    trace = backward_select(s, w)
    avg_obs = average_ranks(trace)
    if plan is None:
        plan = build_plan(s.labels, budget, seed)
    a = plan.assignments
    bs = batched_selection(s.values, a, w, n_jobs=n_jobs)
    sqd = pair_sqdiffs(s.values)
    order = np.argsort(bs.avg_ranks, axis=1, kind="stable")
    results = []
    for rule in rules:
        R0, fallback = resolve_r0(rule, trace, R)
        if fallback:
            warnings.warn(f"R0 rule {rule} selected nothing; using sqrt rule (R0={R0})")
        masks = np.zeros((a.shape[0], R), dtype=bool)
        np.put_along_axis(masks, order[:, :R0], True, axis=1)
        z = subset_statistics(sqd, masks, a, w)
        results.append(ModifiedMrppResult(
            p_bs=lower_tail_p(float(z[0]), z), R0=R0, rule=str(rule),
            selected_vars_observed=[int(r) for r in top_by_average_rank(avg_obs, R0)],
            permutations=int(a.shape[0]), seed=int(plan.seed), fallback=fallback,
            z0=float(z[0]), z_perm=z))
    return results


def modified_mrpp(sample: LabeledSample, rule="sqrt", weights="nk", budget: int = 1000,
                  seed: int = 0, plan=None, n_jobs: int = 1) -> ModifiedMrppResult:
    """Modified MRPP test with selection inside every permutation.

    Parameters
    ----------
    sample : LabeledSample
        Raw data; it is standardized internally.
    rule : str or R0Rule
        ``sl``, ``sign:<delta>``, ``fixed:<k>`` or ``sqrt``.
    weights : {"nk", "nk-1"} or GroupWeights
    budget : int
        Number of labelings including the observed one.
    seed : int
    plan : PermutationPlan, optional
        Overrides ``budget`` and ``seed``.
    n_jobs : int
        Workers for the selection pass; results do not depend on it.

    Returns
    -------
    ModifiedMrppResult
    """
    return modified_mrpp_rules(sample, [rule], weights, budget, seed, plan, n_jobs)[0]
