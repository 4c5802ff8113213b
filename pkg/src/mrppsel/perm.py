"""Permutation plans over group labels.

Every plan lists the observed labeling first. Randomness comes from a
counter-based Philox stream keyed by ``(seed, *keys)`` so plans do not
depend on call order or worker count.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """A child seed for the stream ``(seed, *keys)``, as a plain int."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def count_assignments(sizes) -> int:
    """Number of distinct label vectors with the given group sizes, N!/prod(n_k!)."""
    total = math.factorial(sum(sizes))
    for n in sizes:
        total //= math.factorial(n)
    return total


def count_nonequivalent(sizes) -> int:
    """Support size of the exact MRPP p-value.

    Divides the multinomial count by ``m_j!`` for each distinct group size,
    ``m_j`` being how many groups share that size (swapping equal-sized
    groups leaves the statistic unchanged). Exact integer arithmetic.
    """
    sizes = [int(n) for n in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("group sizes must be positive")
    total = count_assignments(sizes)
    for mult in Counter(sizes).values():
        total //= math.factorial(mult)
    return total


@dataclass(frozen=True)
class PermutationPlan:
    """``B x N`` array of group codes; row 0 is the observed labeling."""

    assignments: np.ndarray
    seed: int
    mode: str  # "exhaustive" or "sampled"

    @property
    def B(self) -> int:
        return self.assignments.shape[0]

    @property
    def observed(self) -> np.ndarray:
        return self.assignments[0]

    def __len__(self):
        return self.B


def _enumerate(labels: np.ndarray) -> np.ndarray:
    N = labels.size
    sizes = np.bincount(labels)
    out = []

    def rec(k, free, current):
        if k == len(sizes) - 1:
            current[list(free)] = k
            out.append(current.copy())
            return
        for chosen in itertools.combinations(free, sizes[k]):
            current[list(chosen)] = k
            rest = tuple(i for i in free if i not in chosen)
            rec(k + 1, rest, current)

    rec(0, tuple(range(N)), np.empty(N, dtype=np.intp))
    return np.array(out)


def build_plan(labels, budget: int = 1000, seed: int = 0) -> PermutationPlan:
    """Plan of ``budget`` label assignments, observed labeling first.

    When all distinct assignments number at most ``budget`` they are
    enumerated exactly (observed first, the rest in lexicographic order
    of group positions); otherwise ``budget - 1`` i.i.d. uniform
    permutations of the observed labels follow the observed one.
    """
    if budget < 2:
        raise ValueError("permutation budget must be at least 2")
    labels = np.asarray(labels, dtype=np.intp)
    sizes = np.bincount(labels)
    if count_assignments(sizes.tolist()) <= budget:
        allv = _enumerate(labels)
        is_obs = np.all(allv == labels, axis=1)
        assignments = np.vstack([labels[None, :], allv[~is_obs]])
        mode = "exhaustive"
    else:
        rng = make_rng(seed)
        rest = rng.permuted(np.tile(labels, (budget - 1, 1)), axis=1)
        assignments = np.vstack([labels[None, :], rest])
        mode = "sampled"
    assignments.setflags(write=False)
    return PermutationPlan(assignments, int(seed), mode)
