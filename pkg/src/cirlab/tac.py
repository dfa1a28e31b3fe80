"""Running table of per-class average embeddings.

One row per class, updated by an exponential moving average of per-class
batch means. The table is treated as a constant during backpropagation:
lookups feed the interference blend, but no gradient flows back into it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError, ShapeError


@dataclass
class ClassTable:
    """table has shape (num_classes, dim); momentum is the EMA weight on
    the fresh batch mean."""

    table: np.ndarray
    momentum: float

    @property
    def num_classes(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def copy(self) -> "ClassTable":
        return ClassTable(table=self.table.copy(), momentum=self.momentum)


def tac_init(
    num_classes: int, dim: int, momentum: float = 0.5, seed: int = 0, scale: float = 1.0
) -> ClassTable:
    """Create a class table with rows drawn N(0, scale^2), seed-determined.

    At least two classes are required — the whole point of the table is
    offering a *wrong* class to blend toward. scale=0 gives a zero table
    for tests that want exact hand arithmetic.
    """
    if num_classes < 2:
        raise ConfigurationError(
            f"num_classes must be >= 2 (need a wrong class), got {num_classes}"
        )
    if dim < 1:
        raise ConfigurationError(f"dim must be >= 1, got {dim}")
    if not 0.0 < momentum <= 1.0:
        raise ConfigurationError(f"momentum must lie in (0, 1], got {momentum}")
    if scale < 0:
        raise ConfigurationError(f"scale must be >= 0, got {scale}")
    table = np.random.default_rng(seed).normal(0.0, scale, size=(num_classes, dim))
    return ClassTable(table=table, momentum=momentum)


def tac_lookup(tac: ClassTable, labels: np.ndarray) -> np.ndarray:
    """Rows of the table for integer labels; a fresh array, never a view."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= tac.num_classes):
        raise InputError(
            f"labels must lie in [0, {tac.num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return tac.table[labels].copy()


def class_means(features: np.ndarray, labels: np.ndarray, num_classes: int):
    """Per-class means of the rows of features.

    Returns (means, counts): means is (num_classes, dim) with zero rows for
    absent classes, counts is the per-class row count.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {features.shape}")
    if labels.shape != (features.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match {features.shape[0]} rows"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"labels must lie in [0, {num_classes})")

    counts = np.bincount(labels, minlength=num_classes).astype(np.int64)
    sums = np.zeros((num_classes, features.shape[1]))
    np.add.at(sums, labels, features)
    means = np.zeros_like(sums)
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    return means, counts


def tac_update(
    tac: ClassTable, features: np.ndarray, labels: np.ndarray, normalize: bool = False
) -> ClassTable:
    """Blend fresh per-class batch means into the table.

    Rows for classes present in the batch move by
    row <- (1 - momentum) * row + momentum * batch_mean; absent classes keep
    their rows. With normalize=True each updated row is rescaled to unit
    Euclidean norm afterward (rows with zero norm are left alone). Returns a
    new table; the input is untouched.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != tac.dim:
        raise ShapeError(
            f"features shape {features.shape} does not match table dim {tac.dim}"
        )
    means, counts = class_means(features, labels, tac.num_classes)
    present = counts > 0
    table = tac.table.copy()
    table[present] = (1.0 - tac.momentum) * table[present] + tac.momentum * means[present]
    if normalize:
        norms = np.linalg.norm(table[present], axis=1)
        safe = norms > 0
        rows = table[present]
        rows[safe] = rows[safe] / norms[safe, None]
        table[present] = rows
    return ClassTable(table=table, momentum=tac.momentum)


def sample_negative_class(rng: np.random.Generator, label: int, num_classes: int) -> int:
    """Draw a class index uniformly from all classes except `label`.

    Consumes exactly one integer draw from rng regardless of the outcome,
    so callers can keep their random streams aligned across configurations.
    """
    if num_classes < 2:
        raise ConfigurationError(
            f"need at least 2 classes to draw a different one, got {num_classes}"
        )
    if not 0 <= label < num_classes:
        raise InputError(f"label {label} outside [0, {num_classes})")
    k = int(rng.integers(0, num_classes - 1))
    return k + (1 if k >= label else 0)
