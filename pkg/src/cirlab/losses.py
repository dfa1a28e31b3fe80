"""Objective functions: hinge triplet loss with batch-all mining,
lookup-table classification scores, cross-entropy, and a closed-form
linear-regression study of the wrong-class blend.

The triplet loss uses squared Euclidean distances,
max(0, margin + ||a - p||^2 - ||a - n||^2); a non-squared variant exists
for ablation. Batch-all mining enumerates every valid (anchor, positive,
negative) triple in the batch; anchors may come from a separately blended
copy of the embeddings while positives and negatives stay raw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError, ShapeError
from .tac import ClassTable

REDUCTIONS = ("mean_all", "mean_nonzero")


@dataclass(frozen=True)
class TripletConfig:
    """margin is the hinge offset; reduction picks the denominator
    (all valid triplets, or only those with positive hinge); squared=False
    switches to plain Euclidean distances."""

    margin: float = 0.5
    reduction: str = "mean_all"
    squared: bool = True

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigurationError(f"margin must be >= 0, got {self.margin}")
        if self.reduction not in REDUCTIONS:
            raise ConfigurationError(
                f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}"
            )


@dataclass(frozen=True)
class StudyCase:
    """One linear-map regression instance: z = W x, target y, decoy mean mu,
    blend weight lam."""

    W: np.ndarray
    x: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    lam: float


@dataclass
class TripletBatchResult:
    """loss plus gradients split by slot: grad_anchor is w.r.t. the blended
    rows used in the anchor slot, grad_other w.r.t. the raw rows used in
    positive/negative slots. Callers add them after pulling grad_anchor
    back through whatever produced the blended rows."""

    loss: float
    grad_anchor: np.ndarray
    grad_other: np.ndarray
    num_triplets: int
    num_active: int


def _dist(a: np.ndarray, b: np.ndarray, squared: bool) -> float:
    d2 = float(np.sum((a - b) ** 2))
    return d2 if squared else float(np.sqrt(d2))


def triplet_loss(
    a: np.ndarray,
    p: np.ndarray,
    n: np.ndarray,
    margin: float,
    squared: bool = True,
    with_grads: bool = False,
):
    """Hinge loss of one (anchor, positive, negative) triple.

    Returns the loss, or (loss, grad_a, grad_p, grad_n) with with_grads.
    The subgradient is zero whenever the hinge argument is <= 0.
    """
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if not (a.shape == p.shape == n.shape):
        raise ShapeError(
            f"triplet shapes differ: {a.shape}, {p.shape}, {n.shape}"
        )
    if margin < 0:
        raise InputError(f"margin must be >= 0, got {margin}")

    hinge = margin + _dist(a, p, squared) - _dist(a, n, squared)
    loss = max(0.0, hinge)
    if not with_grads:
        return loss

    ga = np.zeros_like(a)
    gp = np.zeros_like(p)
    gn = np.zeros_like(n)
    if hinge > 0.0:
        if squared:
            ga = 2.0 * (n - p)  # 2(a-p) - 2(a-n)
            gp = -2.0 * (a - p)
            gn = 2.0 * (a - n)
        else:
            dp = _dist(a, p, squared=False)
            dn = _dist(a, n, squared=False)
            up = (a - p) / dp if dp > 0 else np.zeros_like(a)
            un = (a - n) / dn if dn > 0 else np.zeros_like(a)
            ga = up - un
            gp = -up
            gn = un
    return loss, ga, gp, gn


def batch_all_triplets(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Every valid (anchor, positive, negative) index triple in the batch:
    anchor and positive share a label and differ as rows; the negative has
    any other label."""
    labels = np.asarray(labels)
    out = []
    b = labels.shape[0]
    for a in range(b):
        for p in range(b):
            if p == a or labels[p] != labels[a]:
                continue
            for n in range(b):
                if labels[n] != labels[a]:
                    out.append((a, p, n))
    return out


def batch_all_triplet_loss(
    features: np.ndarray,
    blended_anchors: np.ndarray,
    labels: np.ndarray,
    cfg: TripletConfig,
) -> TripletBatchResult:
    """Triplet loss over all valid triples, vectorized.

    Blended rows serve only in the anchor slot; raw rows serve as positives
    and negatives. Distances are between a blended anchor row and a raw
    row. With an empty triplet set the loss is 0 with zero gradients.
    """
    z = np.asarray(features, dtype=np.float64)
    zt = np.asarray(blended_anchors, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or zt.shape != z.shape:
        raise ShapeError(
            f"features {z.shape} and blended_anchors {zt.shape} must be "
            "equal-shaped 2-D arrays"
        )
    if labels.shape != (z.shape[0],):
        raise ShapeError("labels do not match feature rows")

    b = z.shape[0]
    zero = TripletBatchResult(
        loss=0.0,
        grad_anchor=np.zeros_like(z),
        grad_other=np.zeros_like(z),
        num_triplets=0,
        num_active=0,
    )
    if b == 0:
        return zero

    # pairwise squared distances blended-anchor-to-raw
    sq = (
        np.sum(zt * zt, axis=1)[:, None]
        - 2.0 * (zt @ z.T)
        + np.sum(z * z, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    dist = sq if cfg.squared else np.sqrt(sq)

    same = labels[:, None] == labels[None, :]
    pos_ok = same & ~np.eye(b, dtype=bool)  # (a, p): same label, a != p
    neg_ok = ~same  # (a, n): different label

    # hinge[a, p, n] = margin + dist[a, p] - dist[a, n] over valid triples
    valid = pos_ok[:, :, None] & neg_ok[:, None, :]
    num_triplets = int(valid.sum())
    if num_triplets == 0:
        return zero

    hinge = cfg.margin + dist[:, :, None] - dist[:, None, :]
    active = valid & (hinge > 0.0)
    num_active = int(active.sum())
    total = float(np.sum(hinge, where=active, initial=0.0))

    denom = num_triplets if cfg.reduction == "mean_all" else max(num_active, 1)
    loss = total / denom
    if num_active == 0:
        return TripletBatchResult(
            loss=loss,
            grad_anchor=np.zeros_like(z),
            grad_other=np.zeros_like(z),
            num_triplets=num_triplets,
            num_active=0,
        )

    # per-pair multiplicities: wa[a,p] triplets where (a,p) is the positive
    # pair, wc[a,n] where (a,n) is the negative pair, each times the local
    # derivative of the distance term
    count_ap = active.sum(axis=2).astype(np.float64)
    count_an = active.sum(axis=1).astype(np.float64)
    if cfg.squared:
        wa = 2.0 * count_ap
        wc = 2.0 * count_an
    else:
        safe = np.where(dist > 0.0, dist, 1.0)
        wa = count_ap / safe
        wc = count_an / safe

    w = 1.0 / denom
    row_wa = wa.sum(axis=1)
    row_wc = wc.sum(axis=1)
    col_wa = wa.sum(axis=0)
    col_wc = wc.sum(axis=0)
    grad_anchor = w * ((row_wa - row_wc)[:, None] * zt - wa @ z + wc @ z)
    grad_other = w * ((wc.T - wa.T) @ zt + (col_wa - col_wc)[:, None] * z)
    return TripletBatchResult(
        loss=loss,
        grad_anchor=grad_anchor,
        grad_other=grad_other,
        num_triplets=num_triplets,
        num_active=num_active,
    )


def oim_scores(
    tac: ClassTable, z: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """Similarity of embeddings to every table row: (table @ z) / temperature.

    Accepts one d-vector or a B x d batch; returns matching C or B x C
    logits.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if z2.ndim != 2 or z2.shape[1] != tac.dim:
        raise ShapeError(f"embedding dim {z2.shape} does not match table dim {tac.dim}")
    logits = (z2 @ tac.table.T) / temperature
    return logits[0] if single else logits


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(
    logits: np.ndarray, target: np.ndarray, with_grads: bool = False
):
    """-sum(target * log softmax(logits)), averaged over rows for batches.

    target rows must be valid distributions (entries >= 0, summing to 1
    within 1e-6). With with_grads, also returns d(loss)/d(logits), which for
    the row-mean is (softmax - target) / num_rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ShapeError(
            f"logits shape {logits.shape} != target shape {target.shape}"
        )
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    tg = target[None, :] if single else target
    if lg.ndim != 2:
        raise ShapeError(f"logits must be 1-D or 2-D, got shape {logits.shape}")
    if np.any(tg < 0) or np.any(np.abs(tg.sum(axis=1) - 1.0) > 1e-6):
        raise InputError("target rows must be distributions (>= 0, sum to 1)")

    shifted = lg - lg.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-np.sum(tg * logp) / lg.shape[0])
    if not with_grads:
        return loss
    grads = (np.exp(logp) - tg) / lg.shape[0]
    return loss, (grads[0] if single else grads)


def label_smooth(classes, num_classes: int, epsilon: float = 0.0) -> np.ndarray:
    """Smoothed target distributions: (1 - epsilon) * onehot + epsilon / C.

    classes may be a single id or an array of ids; returns a C-vector or a
    B x C matrix accordingly.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ConfigurationError(f"epsilon must lie in [0, 1), got {epsilon}")
    ids = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if ids.size and (ids.min() < 0 or ids.max() >= num_classes):
        raise InputError(f"class ids must lie in [0, {num_classes})")
    out = np.full((ids.shape[0], num_classes), epsilon / num_classes)
    out[np.arange(ids.shape[0]), ids] += 1.0 - epsilon
    return out[0] if np.isscalar(classes) or np.ndim(classes) == 0 else out


def study_case_loss(case: StudyCase):
    """Closed-form study of the blend on least squares.

    For z = W x with plain loss 0.5 ||z - y||^2, blending z toward mu with
    weight lam gives the same regularized loss written two ways:
      form A: 0.5 ||(1 - lam) W x + lam mu - y||^2   (blend-then-subtract)
      form B: 0.5 ||(W x - y) - lam (W x - mu)||^2   (residual minus pull)
    Returns (plain_loss, form_a, form_b, grad_W) where grad_W is the exact
    gradient of the regularized loss: (1 - lam) * r x^T with residual
    r = (1 - lam) W x + lam mu - y.
    """
    W = np.asarray(case.W, dtype=np.float64)
    x = np.asarray(case.x, dtype=np.float64)
    y = np.asarray(case.y, dtype=np.float64)
    mu = np.asarray(case.mu, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeError(f"W must be 2-D, got shape {W.shape}")
    if x.shape != (W.shape[1],):
        raise ShapeError(f"x shape {x.shape} does not match W columns {W.shape[1]}")
    if y.shape != (W.shape[0],) or mu.shape != (W.shape[0],):
        raise ShapeError("y and mu must match W rows")

    lam = float(case.lam)
    z = W @ x
    plain = 0.5 * float(np.sum((z - y) ** 2))
    r = (1.0 - lam) * z + lam * mu - y
    form_a = 0.5 * float(np.sum(r * r))
    form_b = 0.5 * float(np.sum(((z - y) - lam * (z - mu)) ** 2))
    grad_w = (1.0 - lam) * np.outer(r, x)
    return plain, form_a, form_b, grad_w
