"""Evaluation: episodic few-shot accuracy, retrieval metrics, and
embedding-geometry statistics.

Episodes are re-derived from (master_seed, episode_index) child seeds, so
the reported mean is independent of evaluation order. Distances are plain
Euclidean on raw embeddings throughout (squared for the nearest-prototype
argmin, where squaring changes nothing); a cosine option exists for
ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError
from .nn import ModelParams, forward
from .sampling import child_seed, sample_episode

METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class EpisodicResult:
    """Mean episode accuracy, 95% confidence half-width, episode count."""

    mean: float
    ci95: float
    episodes: int


@dataclass(frozen=True)
class GeometryStats:
    """Spread statistics of an embedded, labeled sample cloud.

    center_distance: mean distance to the center of mass. intra/inter:
    mean pairwise distance within / across classes, pooled over all pairs.
    intra is None when no class has two samples; ratio = inter / intra is
    None whenever intra is None or zero.
    """

    center_distance: float
    intra: float | None
    inter: float | None
    ratio: float | None


def _pairwise_dist(a: np.ndarray, b: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Distance matrix between rows of a and rows of b."""
    if metric not in METRICS:
        raise ConfigurationError(f"metric must be one of {METRICS}, got {metric!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1, keepdims=True)
        nb = np.linalg.norm(b, axis=1, keepdims=True)
        na = np.where(na > 0, na, 1.0)
        nb = np.where(nb > 0, nb, 1.0)
        return 1.0 - (a / na) @ (b / nb).T
    sq = (
        np.sum(a * a, axis=1)[:, None]
        - 2.0 * (a @ b.T)
        + np.sum(b * b, axis=1)[None, :]
    )
    return np.sqrt(np.maximum(sq, 0.0))


def nearest_prototype_classify(
    support_features: np.ndarray,
    support_labels: np.ndarray,
    queries: np.ndarray,
    metric: str = "euclidean",
) -> np.ndarray:
    """Assign each query the class of its nearest per-class support mean.

    Ties go to the smallest class index. Accepts one query vector or a
    batch of query rows; returns matching scalar or vector predictions.
    """
    support_features = np.asarray(support_features, dtype=np.float64)
    support_labels = np.asarray(support_labels)
    queries = np.asarray(queries, dtype=np.float64)
    single = queries.ndim == 1
    q = queries[None, :] if single else queries
    if q.shape[1] != support_features.shape[1]:
        raise ShapeError("query dim does not match support dim")

    classes = np.unique(support_labels)
    protos = np.stack(
        [support_features[support_labels == c].mean(axis=0) for c in classes]
    )
    dist = _pairwise_dist(q, protos, metric)
    # argmin returns the first (lowest-index) minimum; classes are sorted,
    # so ties already resolve to the smallest class id
    pred = classes[np.argmin(dist, axis=1)]
    return pred[0] if single else pred


def episodic_accuracy(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    n_way: int,
    k_shot: int,
    q_queries: int,
    episodes: int = 600,
    master_seed: int = 0,
    metric: str = "euclidean",
) -> EpisodicResult:
    """Mean nearest-prototype accuracy over independently seeded episodes.

    Episode i draws its task with child_seed(master_seed, i); accuracy is
    averaged over episodes with a 1.96 * sd / sqrt(E) half-width.
    """
    if episodes < 1:
        raise ConfigurationError(f"episodes must be >= 1, got {episodes}")
    accs = np.empty(episodes)
    for i in range(episodes):
        rng = np.random.default_rng(child_seed(master_seed, i))
        ep = sample_episode(features, labels, n_way, k_shot, q_queries, rng)
        sup_emb, _ = forward(params, ep.support_features)
        qry_emb, _ = forward(params, ep.query_features)
        pred = nearest_prototype_classify(sup_emb, ep.support_labels, qry_emb, metric)
        accs[i] = float(np.mean(pred == ep.query_labels))
    mean = float(accs.mean())
    sd = float(accs.std(ddof=1)) if episodes > 1 else 0.0
    return EpisodicResult(
        mean=mean, ci95=float(1.96 * sd / np.sqrt(episodes)), episodes=episodes
    )


def _check_gallery_covers(query_labels: np.ndarray, gallery_labels: np.ndarray) -> None:
    missing = sorted(set(query_labels.tolist()) - set(gallery_labels.tolist()))
    if missing:
        raise DataError(f"query labels with no gallery positive: {missing}")


def retrieval_map(
    query_features: np.ndarray,
    query_labels: np.ndarray,
    gallery_features: np.ndarray,
    gallery_labels: np.ndarray,
    metric: str = "euclidean",
) -> float:
    """Mean average precision of label retrieval.

    Per query the gallery is ranked by ascending distance (ties broken by
    gallery index); AP averages precision at each relevant rank; mAP
    averages AP over queries.
    """
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    _check_gallery_covers(query_labels, gallery_labels)
    dist = _pairwise_dist(query_features, gallery_features, metric)
    aps = np.empty(dist.shape[0])
    for qi in range(dist.shape[0]):
        order = np.argsort(dist[qi], kind="stable")
        relevant = gallery_labels[order] == query_labels[qi]
        hits = np.cumsum(relevant)
        ranks = np.arange(1, len(order) + 1)
        precisions = hits[relevant] / ranks[relevant]
        aps[qi] = float(precisions.mean())
    return float(aps.mean())


def cmc_rank1(
    query_features: np.ndarray,
    query_labels: np.ndarray,
    gallery_features: np.ndarray,
    gallery_labels: np.ndarray,
    metric: str = "euclidean",
) -> float:
    """Fraction of queries whose single nearest gallery row shares their
    label (ties broken by gallery index)."""
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    _check_gallery_covers(query_labels, gallery_labels)
    dist = _pairwise_dist(query_features, gallery_features, metric)
    nearest = np.argmin(dist, axis=1)  # first minimum = lowest gallery index
    return float(np.mean(gallery_labels[nearest] == query_labels))


def geometry_stats(features: np.ndarray, labels: np.ndarray) -> GeometryStats:
    """Center-of-mass spread and pooled intra/inter class mean distances."""
    z = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {z.shape}")
    if labels.shape != (z.shape[0],):
        raise ShapeError("labels do not match feature rows")
    if len(np.unique(labels)) < 2:
        raise DataError("geometry statistics need at least 2 classes")

    center = z.mean(axis=0)
    center_distance = float(np.linalg.norm(z - center, axis=1).mean())

    dist = _pairwise_dist(z, z)
    iu = np.triu_indices(z.shape[0], k=1)
    same = labels[iu[0]] == labels[iu[1]]
    pair_d = dist[iu]
    intra = float(pair_d[same].mean()) if same.any() else None
    inter = float(pair_d[~same].mean()) if (~same).any() else None
    ratio = None
    if intra is not None and intra > 0 and inter is not None:
        ratio = inter / intra
    return GeometryStats(
        center_distance=center_distance, intra=intra, inter=inter, ratio=ratio
    )
