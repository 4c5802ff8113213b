"""Labeled multivariate samples: validation, CSV ingestion and standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised when an input sample violates the layout requirements."""


@dataclass(frozen=True)
class LabeledSample:
    """An ``N x R`` data matrix with one group code per row.

    Group codes are integers ``0..K-1`` in order of first appearance;
    ``group_names`` keeps the original labels.
    """

    values: np.ndarray
    labels: np.ndarray
    group_names: tuple = ()
    variable_names: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError("values must be a 2-d matrix")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != values.shape[0]:
            raise DataError("need exactly one label per row")
        codes, names = _encode_labels(labels)
        if values.shape[1] < 1:
            raise DataError("R < 1: no variables")
        if not np.all(np.isfinite(values)):
            raise DataError("values must be finite (no NaN/Inf)")
        sizes = np.bincount(codes)
        if sizes.size < 2:
            raise DataError("K < 2: need at least two groups")
        if sizes.min() < 2:
            bad = names[int(np.argmin(sizes))]
            raise DataError(f"group {bad!r} has fewer than 2 observations")
        values.setflags(write=False)
        codes.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", codes)
        if not self.group_names:
            object.__setattr__(self, "group_names", tuple(names))
        if not self.variable_names:
            object.__setattr__(
                self, "variable_names",
                tuple(f"V{r + 1}" for r in range(values.shape[1])))
        elif len(self.variable_names) != values.shape[1]:
            raise DataError("variable_names length does not match R")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def R(self) -> int:
        return self.values.shape[1]

    @property
    def K(self) -> int:
        return len(self.group_sizes)

    @property
    def group_sizes(self) -> tuple:
        return tuple(int(n) for n in np.bincount(self.labels))

    def with_labels(self, labels) -> "LabeledSample":
        """Same data under a different group assignment."""
        return LabeledSample(self.values, labels, variable_names=self.variable_names)

    def subset(self, columns) -> "LabeledSample":
        columns = list(columns)
        return LabeledSample(
            self.values[:, columns], self.labels, self.group_names,
            tuple(self.variable_names[c] for c in columns))


def _encode_labels(labels):
    """Map arbitrary labels to codes 0..K-1 by first appearance."""
    mapping = {}
    codes = np.empty(len(labels), dtype=np.intp)
    for i, lab in enumerate(labels.tolist()):
        codes[i] = mapping.setdefault(lab, len(mapping))
    return codes, list(mapping)


@dataclass(frozen=True)
class StandardizedSample(LabeledSample):
    """A sample whose columns have pooled mean 0 and pooled sample SD 1.

    Constant columns are zeroed and listed in ``constant``.
    """

    mean: np.ndarray = field(default=None, repr=False)
    sd: np.ndarray = field(default=None, repr=False)
    constant: tuple = ()


def standardize(sample: LabeledSample) -> StandardizedSample:
    """Center and scale each column with pooled (all-N) moments.

    The SD uses divisor ``N - 1``. Pooled moments are invariant to label
    permutation, so permutation tests on the result stay valid.
    """
    x = sample.values
    mean = x.mean(axis=0)
    centered = x - mean
    sd = np.sqrt((centered ** 2).sum(axis=0) / (x.shape[0] - 1))
    # relative threshold catches columns that are constant up to round-off
    scale = np.maximum(np.abs(mean), 1.0)
    constant = sd <= 1e-13 * scale
    safe_sd = np.where(constant, 1.0, sd)
    z = np.where(constant, 0.0, centered / safe_sd)
    # second pass removes the O(eps) residual mean left by the division
    z = z - np.where(constant, 0.0, z.mean(axis=0))
    return StandardizedSample(
        z, sample.labels, sample.group_names, sample.variable_names,
        mean=mean, sd=sd, constant=tuple(int(c) for c in np.flatnonzero(constant)))


def load_csv(path, group_column: str) -> LabeledSample:
    """Read a labeled sample from a UTF-8 CSV file with a header row.

    Every column except ``group_column`` must hold finite numbers.
    Errors name the offending row (1-based, header is row 1) and column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, missing header") from None
        header = [h.strip() for h in header]
        if not header or all(h == "" for h in header):
            raise DataError(f"{path}: missing header")
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise DataError(f"{path}: duplicate header column(s) {dupes}")
        if group_column not in header:
            raise DataError(f"{path}: group column {group_column!r} not found")
        g = header.index(group_column)
        var_names = [h for j, h in enumerate(header) if j != g]
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            vals = []
            for j, cell in enumerate(row):
                if j == g:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {lineno}, column {header[j]!r}: "
                        f"cannot parse {cell!r} as a finite number")
                vals.append(v)
            labels.append(row[g].strip())
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return LabeledSample(np.array(rows, dtype=float).reshape(len(rows), -1),
                         np.array(labels, dtype=object),
                         variable_names=tuple(var_names))


def write_csv(sample: LabeledSample, path, group_column: str = "group") -> None:
    """Write ``sample`` in the format read by :func:`load_csv`.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([group_column, *sample.variable_names])
        for lab, row in zip(sample.labels, sample.values):
            w.writerow([sample.group_names[lab], *(repr(float(v)) for v in row)])


def from_groups(groups: Sequence, variable_names=None) -> LabeledSample:
    """Stack per-group matrices into one sample, group k gets code k."""
    mats = [np.atleast_2d(np.asarray(g, dtype=float)) for g in groups]
    labels = np.concatenate([np.full(m.shape[0], k) for k, m in enumerate(mats)])
    return LabeledSample(np.vstack(mats), labels,
                         variable_names=tuple(variable_names or ()))
