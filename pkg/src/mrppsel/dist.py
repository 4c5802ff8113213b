"""Pairwise distances stored in condensed (upper-triangular) form.

Pairs ``(i, j)`` with ``i < j`` are laid out row-major, the same order as
``np.triu_indices(N, 1)`` and :func:`scipy.spatial.distance.pdist`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .data import LabeledSample

# full recomputation cadence for incremental removals
REFRESH_EVERY = 64
# rebuild when a pair shrinks below this fraction of its value at the last
# rebuild: REFRESH_EVERY subtractions then cost at most ~1e-10 relative
_DRIFT = float(np.finfo(np.longdouble).eps) * REFRESH_EVERY * 1e10


@lru_cache(maxsize=32)
def pair_index(N: int):
    """Row and column index arrays of the condensed pair layout."""
    iu, ju = np.triu_indices(N, 1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


def n_pairs(N: int) -> int:
    return N * (N - 1) // 2


def pair_sqdiffs(values: np.ndarray, columns=None) -> np.ndarray:
    """Per-variable squared differences, shape ``(R, P)``.

    Row ``r`` holds ``(Y[i, r] - Y[j, r])**2`` for every pair.
    """
    x = np.asarray(values, dtype=float)
    if columns is not None:
        x = x[:, list(columns)]
    iu, ju = pair_index(x.shape[0])
    d = x.T[:, iu] - x.T[:, ju]
    return d * d


def to_square(condensed: np.ndarray) -> np.ndarray:
    P = condensed.shape[-1]
    N = int(round((1 + np.sqrt(1 + 8 * P)) / 2))
    iu, ju = pair_index(N)
    out = np.zeros((N, N))
    out[iu, ju] = condensed
    out[ju, iu] = condensed
    return out


def as_condensed(d) -> np.ndarray:
    """Accept a :class:`PairDistances`, a square matrix or a condensed vector."""
    if isinstance(d, PairDistances):
        return d.dist
    d = np.asarray(d, dtype=float)
    if d.ndim == 2:
        if d.shape[0] != d.shape[1]:
            raise ValueError("pairwise matrix must be square")
        iu, ju = pair_index(d.shape[0])
        return d[iu, ju]
    return d


def n_from_pairs(P: int) -> int:
    N = int(round((1 + np.sqrt(1 + 8 * P)) / 2))
    if n_pairs(N) != P:
        raise ValueError(f"{P} is not a valid condensed length")
    return N


@dataclass(frozen=True)
class VariableSquaredDiffs:
    """Squared differences of one variable over all pairs."""

    index: int
    values: np.ndarray


def variable_sqdiffs(sample, r: int) -> VariableSquaredDiffs:
    x = sample.values if isinstance(sample, LabeledSample) else np.asarray(sample)
    return VariableSquaredDiffs(int(r), pair_sqdiffs(x, [r])[0])


@dataclass(frozen=True)
class PairDistances:
    """Squared and plain Euclidean distances over an active variable set.

    ``sqdist`` is kept in extended precision so repeated incremental
    removals do not accumulate float64 cancellation error.
    """

    values: np.ndarray
    active: tuple
    sqdist_ext: np.ndarray
    removals: int = 0
    # sqdist at the last full rebuild, the reference for drift control
    base: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @cached_property
    def sqdist(self) -> np.ndarray:
        return self.sqdist_ext.astype(float)

    @cached_property
    def dist(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.sqdist, 0.0))

    def square(self) -> np.ndarray:
        return to_square(self.dist)


def _values(sample) -> np.ndarray:
    return sample.values if isinstance(sample, LabeledSample) else np.asarray(sample, float)


def _sqdist_ext(x, columns, weights=None):
    d = pair_sqdiffs(x, columns).astype(np.longdouble)
    if weights is None:
        return d.sum(axis=0)
    return (np.asarray(weights, dtype=np.longdouble)[:, None] * d).sum(axis=0)


def euclidean(sample, columns=None) -> PairDistances:
    """Euclidean distances over all (or the listed) variables."""
    x = _values(sample)
    columns = tuple(range(x.shape[1])) if columns is None else tuple(int(c) for c in columns)
    return PairDistances(x, columns, _sqdist_ext(x, columns))


def weighted_euclidean(sample, weights) -> PairDistances:
    """Distances ``sqrt(sum_r w_r (Y_ir - Y_jr)**2)`` with nonnegative weights."""
    x = _values(sample)
    w = np.asarray(weights, dtype=float)
    if w.shape != (x.shape[1],):
        raise ValueError(f"need one weight per variable ({x.shape[1]})")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    columns = tuple(range(x.shape[1]))
    if np.all(w == 1.0):
        return PairDistances(x, columns, _sqdist_ext(x, columns))
    return PairDistances(x, columns, _sqdist_ext(x, columns, w))


def gradient_distance(sample, pd: PairDistances, r: int) -> np.ndarray:
    """Derivative of the weighted distance in the weight of variable ``r``.

    ``(Y_ir - Y_jr)**2 / (2 * dist(i, j))``, defined as 0 for coincident pairs.
    """
    if r not in pd.active:
        raise ValueError(f"variable {r} is not active")
    return gradient_distances(pd, [r], sample)[0]


def gradient_distances(pd: PairDistances, columns=None, sample=None) -> np.ndarray:
    """Gradient distances for several variables, shape ``(len(columns), P)``."""
    columns = pd.active if columns is None else columns
    x = pd.values if sample is None else _values(sample)
    d = pair_sqdiffs(x, columns)
    dist = pd.dist
    inv = np.zeros_like(dist)
    np.divide(0.5, dist, out=inv, where=dist > 0)
    return d * inv


def _check_active(pd, vds):
    if vds.index not in pd.active:
        raise ValueError(f"variable {vds.index} is not active")


def drop1_distance(pd: PairDistances, vds: VariableSquaredDiffs) -> PairDistances:
    """Distances with variable ``vds.index`` left out (negative round-off clamped)."""
    _check_active(pd, vds)
    sq = np.maximum(pd.sqdist_ext - vds.values, 0)
    active = tuple(c for c in pd.active if c != vds.index)
    return PairDistances(pd.values, active, sq, pd.removals)


def add1_distance(pd: PairDistances, vds: VariableSquaredDiffs) -> PairDistances:
    """Distances with variable ``vds.index`` counted twice.

    The returned ``active`` set is unchanged; the duplicate lives only in
    the distances.
    """
    _check_active(pd, vds)
    return PairDistances(pd.values, pd.active, pd.sqdist_ext + vds.values, pd.removals)


def remove_variable(pd: PairDistances, vds: VariableSquaredDiffs) -> PairDistances:
    """Successor state with one variable deactivated, O(P) per call.

    Every :data:`REFRESH_EVERY` removals, if any entry drifts below
    ``-1e-9``, or if cancellation has shrunk some pair so far that
    round-off could exceed ~1e-10 of it, the squared distances are
    rebuilt from scratch.
    """
    _check_active(pd, vds)
    active = tuple(c for c in pd.active if c != vds.index)
    base = pd.sqdist_ext if pd.base is None else pd.base
    sq = pd.sqdist_ext - vds.values
    removals = pd.removals + 1
    if (removals % REFRESH_EVERY == 0 or sq.min(initial=0) < -1e-9
            or np.any(sq < _DRIFT * base)):
        sq = _sqdist_ext(pd.values, active)
        base = sq
    return PairDistances(pd.values, active, np.maximum(sq, 0), removals, base)
