"""Batch and episode construction.

PK batches (P classes, K samples each) feed triplet training; N-way K-shot
episodes feed evaluation. Episode randomness is derived per-index from a
master seed with a fixed 64-bit avalanche mix, so episode i has the same
content no matter how many episodes run or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, InputError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class PKSpec:
    """P classes per batch, K samples per class (batch size P*K)."""

    p_classes: int
    k_samples: int

    def __post_init__(self):
        if self.p_classes < 2:
            raise ConfigurationError(
                f"p_classes must be >= 2 (need a negative class), got {self.p_classes}"
            )
        if self.k_samples < 2:
            raise ConfigurationError(
                f"k_samples must be >= 2 (need a positive), got {self.k_samples}"
            )

    @property
    def batch_size(self) -> int:
        return self.p_classes * self.k_samples


@dataclass
class Episode:
    """One N-way K-shot evaluation task with Q queries per class.

    Labels are relabeled 0..N-1 in sampled-class order; class_ids maps them
    back. Index arrays point into the split the episode was drawn from.
    """

    n_way: int
    k_shot: int
    q_queries: int
    support_features: np.ndarray
    support_labels: np.ndarray
    query_features: np.ndarray
    query_labels: np.ndarray
    class_ids: tuple[int, ...]
    support_indices: np.ndarray
    query_indices: np.ndarray


def child_seed(master_seed: int, index: int) -> int:
    """Mix (master_seed, index) into an independent 64-bit stream seed.

    splitmix64 finalizer over master_seed + (index + 1) * golden-gamma;
    stable across releases — serialized run provenance depends on it.
    """
    if index < 0:
        raise InputError(f"index must be >= 0, got {index}")
    x = (int(master_seed) + (index + 1) * _GOLDEN) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def _class_index_lists(labels: np.ndarray) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def pk_batch(
    features: np.ndarray, labels: np.ndarray, spec: PKSpec, rng: np.random.Generator
) -> np.ndarray:
    """Row indices of one PK batch: P classes drawn without replacement,
    then K distinct rows per class, class-major order.

    Every class in the dataset must hold at least K rows; a short class
    fails loudly even if this draw would not have touched it.
    """
    by_class = _class_index_lists(labels)
    classes = sorted(by_class)
    if len(classes) < spec.p_classes:
        raise DataError(
            f"need {spec.p_classes} classes, dataset has {len(classes)}"
        )
    for c in classes:
        if len(by_class[c]) < spec.k_samples:
            raise DataError(
                f"class {c} has {len(by_class[c])} samples, need {spec.k_samples}"
            )

    drawn = rng.choice(len(classes), size=spec.p_classes, replace=False)
    out = np.empty(spec.batch_size, dtype=np.int64)
    for slot, ci in enumerate(drawn):
        rows = by_class[classes[int(ci)]]
        picked = rng.choice(len(rows), size=spec.k_samples, replace=False)
        out[slot * spec.k_samples : (slot + 1) * spec.k_samples] = rows[picked]
    return out


def sample_episode(
    features: np.ndarray,
    labels: np.ndarray,
    n_way: int,
    k_shot: int,
    q_queries: int,
    rng: np.random.Generator,
) -> Episode:
    """Draw one N-way K-shot episode with Q queries per class.

    N classes without replacement; per class K+Q distinct rows, the first K
    to support; episode labels are 0..N-1 in sampled order.
    """
    if n_way < 2:
        raise ConfigurationError(f"n_way must be >= 2, got {n_way}")
    if k_shot < 1 or q_queries < 1:
        raise ConfigurationError("k_shot and q_queries must be >= 1")
    features = np.asarray(features)
    by_class = _class_index_lists(labels)
    classes = sorted(by_class)
    if len(classes) < n_way:
        raise DataError(f"need {n_way} classes for the episode, split has {len(classes)}")
    need = k_shot + q_queries
    for c in classes:
        if len(by_class[c]) < need:
            raise DataError(
                f"class {c} has {len(by_class[c])} samples, episode needs {need}"
            )

    drawn = rng.choice(len(classes), size=n_way, replace=False)
    sup_idx, qry_idx = [], []
    sup_lab, qry_lab = [], []
    class_ids = []
    for new_label, ci in enumerate(drawn):
        c = classes[int(ci)]
        class_ids.append(c)
        rows = by_class[c]
        picked = rows[rng.choice(len(rows), size=need, replace=False)]
        sup_idx.extend(picked[:k_shot])
        qry_idx.extend(picked[k_shot:])
        sup_lab.extend([new_label] * k_shot)
        qry_lab.extend([new_label] * q_queries)

    sup_idx = np.asarray(sup_idx, dtype=np.int64)
    qry_idx = np.asarray(qry_idx, dtype=np.int64)
    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        q_queries=q_queries,
        support_features=features[sup_idx],
        support_labels=np.asarray(sup_lab, dtype=np.int64),
        query_features=features[qry_idx],
        query_labels=np.asarray(qry_lab, dtype=np.int64),
        class_ids=tuple(class_ids),
        support_indices=sup_idx,
        query_indices=qry_idx,
    )
