"""Training loops: triplet metric learning and table-lookup / cross-entropy
classification, each with optional wrong-class blending of the output
features, plus the two-stage schedule (cross-entropy pretrain, then triplet).

Every run is driven by one master seed. Independent random streams are
derived with child_seed(master, k): k=0 encoder init, 1 class-table init,
2 the training stream (batches, negative-class draws, noise), 3 validation
episodes, 4 train-proxy episodes, 5 holdout selection, 6 classifier head
init. Runs are fully deterministic on one thread.

Per iteration: sample a batch, embed it, blend the designated rows toward
drawn wrong-class table rows (or add matched Gaussian noise instead),
compute the loss on blended-anchor/raw-other rows, pull anchor gradients
back through the blend's (1 - strength) factor, take one SGD step, then
fold the *raw pre-step* per-class batch means into the table.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .batch import EmbeddingBatch
from .datagen import Dataset
from .errors import ConfigurationError, DataError, NumericError
from .evaluate import episodic_accuracy, geometry_stats, retrieval_map, cmc_rank1
from .interference import (
    InterferenceConfig,
    NoiseConfig,
    gaussian_perturb,
    interfere_backward,
    interfere_batch,
    matched_noise_sigma,
)
from .losses import (
    TripletConfig,
    batch_all_triplet_loss,
    cross_entropy,
    label_smooth,
    oim_scores,
)
from .nn import (
    LrSchedule,
    ModelParams,
    backward,
    forward,
    init_params,
    input_gradient,
    sgd_step,
)
from .sampling import PKSpec, child_seed, pk_batch
from .tac import ClassTable, tac_init, tac_update

LOSS_MODES = ("triplet", "oim", "cross_entropy")
MINING_MODES = ("batch_all", "preformed")

CSV_HEADER = "epoch,stage,lr,train_loss,train_acc,val_acc,center_dist,inter_intra_ratio"


@dataclass(frozen=True)
class TrainConfig:
    """Everything one run needs; see the module docstring for semantics.

    For the Gaussian-noise control arm, `noise` is set (and interference
    disabled); when noise.sigma is None the scale is matched per batch to
    the displacement the blend at interference.strength would have caused.
    """

    loss_mode: str = "triplet"
    epochs: int = 30
    iterations: int = 100
    seed: int = 0
    hidden_dims: tuple[int, ...] = (64,)
    embed_dim: int = 16
    activation: str = "relu"
    learning_rate: float = 0.0002
    decay_start_epoch: int = 0
    decay_factor: float = 1.0
    p_classes: int = 8
    k_samples: int = 4
    tac_momentum: float = 0.5
    tac_normalize: bool = False
    interference: InterferenceConfig = field(default_factory=InterferenceConfig)
    noise: NoiseConfig | None = None
    triplet: TripletConfig = field(default_factory=TripletConfig)
    temperature: float = 1.0
    label_smoothing: float = 0.0
    mining: str = "batch_all"
    eval_n_way: int = 5
    eval_k_shot: int = 1
    eval_q_queries: int = 5
    eval_episodes: int = 40
    holdout_fraction: float = 0.1
    stage2: "TrainConfig | None" = None

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigurationError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.embed_dim < 1:
            raise ConfigurationError("embed_dim must be >= 1")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.mining not in MINING_MODES:
            raise ConfigurationError(
                f"mining must be one of {MINING_MODES}, got {self.mining!r}"
            )
        if self.noise is not None and self.noise.enabled and self.interference.enabled:
            raise ConfigurationError(
                "interference and noise are mutually exclusive perturbations"
            )
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError("label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigurationError("holdout_fraction must lie in [0, 1)")
        if self.loss_mode in ("oim", "cross_entropy") and self.holdout_fraction == 0.0:
            raise ConfigurationError(
                "classification modes need holdout_fraction > 0 for validation"
            )
        if self.eval_n_way < 2 or self.eval_k_shot < 1 or self.eval_q_queries < 1:
            raise ConfigurationError("episodic eval needs n_way >= 2, k/q >= 1")
        if self.eval_episodes < 1:
            raise ConfigurationError("eval_episodes must be >= 1")
        # construct to validate the rate/decay ranges even for epochs = 0
        self.make_schedule()

    def make_schedule(self) -> LrSchedule:
        return LrSchedule(
            initial_rate=self.learning_rate,
            decay_start_epoch=self.decay_start_epoch,
            decay_factor_per_epoch=self.decay_factor,
            total_epochs=max(1, self.epochs),
        )


@dataclass(frozen=True)
class EpochLog:
    """One row of the training curve; ratio may be absent on degenerate
    embeddings (no within-class pairs or zero intra spread)."""

    epoch: int
    stage: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    center_dist: float
    inter_intra_ratio: float | None


def logs_to_csv(logs: list[EpochLog]) -> str:
    lines = [CSV_HEADER]
    for row in logs:
        ratio = "" if row.inter_intra_ratio is None else repr(row.inter_intra_ratio)
        lines.append(
            f"{row.epoch},{row.stage},{row.lr!r},{row.train_loss!r},"
            f"{row.train_acc!r},{row.val_acc!r},{row.center_dist!r},{ratio}"
        )
    return "\n".join(lines) + "\n"


def _holdout_rows(labels: np.ndarray, fraction: float, seed: int):
    """Deterministic stratified holdout: per class, the last floor(fraction
    * count) of a seeded permutation of its rows."""
    rng = np.random.default_rng(seed)
    held = []
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        take = int(np.floor(fraction * len(rows)))
        if take:
            perm = rng.permutation(len(rows))
            held.extend(rows[perm[:take]])
    held = np.array(sorted(held), dtype=np.int64)
    keep = np.setdiff1d(np.arange(len(labels)), held)
    return keep, held


def check_feasible(train_ds: Dataset, val_ds: Dataset | None, cfg: TrainConfig) -> None:
    """Reject config/split mismatches before touching any rng."""
    if train_ds.size == 0:
        raise DataError("training split is empty")
    if cfg.loss_mode == "triplet":
        counts = np.bincount(train_ds.labels, minlength=train_ds.class_count)
        if train_ds.class_count < cfg.p_classes:
            raise DataError(
                f"train split has {train_ds.class_count} classes, "
                f"batches need {cfg.p_classes}"
            )
        short = np.flatnonzero(counts < cfg.k_samples)
        if short.size:
            raise DataError(
                f"class {short[0]} has {counts[short[0]]} samples, "
                f"batches need {cfg.k_samples}"
            )
        if val_ds is None:
            raise DataError("triplet mode needs a validation split for episodes")
        if val_ds.class_count < cfg.eval_n_way:
            raise DataError(
                f"validation split has {val_ds.class_count} classes, "
                f"episodes need {cfg.eval_n_way}"
            )
        val_counts = np.bincount(val_ds.labels, minlength=val_ds.class_count)
        need = cfg.eval_k_shot + cfg.eval_q_queries
        short = np.flatnonzero(val_counts < need)
        if short.size:
            raise DataError(
                f"validation class {short[0]} has {val_counts[short[0]]} samples, "
                f"episodes need {need}"
            )
    if train_ds.class_count < 2:
        raise DataError("need at least 2 training classes")


def _perturb(z, labels, tac, cfg, rng):
    """Blend designated rows toward drawn wrong-class rows, or substitute
    Gaussian noise at the same call site (control arm). The wrong-class
    draws are consumed either way so streams stay aligned."""
    blended, decoys = interfere_batch(z, labels, tac, cfg.interference, rng)
    if cfg.noise is not None and cfg.noise.enabled:
        n_designated = int((decoys >= 0).sum())
        if n_designated:
            sigma = cfg.noise.sigma
            if sigma is None:
                sigma = matched_noise_sigma(
                    z, labels, tac, cfg.interference.strength, decoys
                )
            blended = z.copy()
            blended[:n_designated] = gaussian_perturb(
                z[:n_designated], sigma, rng
            )
    return blended, decoys


def _pull_back_anchor_grads(grad_anchor, decoys, cfg):
    """d(blended)/d(z) is (1 - strength) on blended rows, identity on
    pass-through rows (and on noise-perturbed rows, where the noise is an
    additive constant w.r.t. z)."""
    if not cfg.interference.enabled or cfg.interference.strength == 0.0:
        return grad_anchor
    out = grad_anchor.copy()
    mask = decoys >= 0
    out[mask] = interfere_backward(grad_anchor[mask], cfg.interference.strength)
    return out


def _uniform_batch(n: int, size: int, rng) -> np.ndarray:
    return rng.choice(n, size=min(size, n), replace=False)


def train(
    train_ds: Dataset,
    val_ds: Dataset | None,
    cfg: TrainConfig,
    initial_params: ModelParams | None = None,
    stage: int = 1,
    epoch_offset: int = 0,
):
    """Run one training stage; returns (params, table, epoch logs).

    With initial_params the encoder continues from that state (its own
    fresh table is still created — stage 2 of the two-stage schedule).
    """
    check_feasible(train_ds, val_ds, cfg)

    dims = (train_ds.input_dim, *cfg.hidden_dims, cfg.embed_dim)
    if initial_params is not None:
        if initial_params.layer_dims != dims:
            raise ConfigurationError(
                f"initial params dims {initial_params.layer_dims} do not match "
                f"configured dims {dims}"
            )
        params = initial_params.copy()
    else:
        params = init_params(dims, cfg.activation, seed=child_seed(cfg.seed, 0))
    tac = tac_init(
        train_ds.class_count, cfg.embed_dim, cfg.tac_momentum,
        seed=child_seed(cfg.seed, 1),
    )
    rng = np.random.default_rng(child_seed(cfg.seed, 2))
    schedule = cfg.make_schedule()

    feats = train_ds.features.astype(np.float64)
    labels = train_ds.labels
    classifier_mode = cfg.loss_mode in ("oim", "cross_entropy")
    if classifier_mode:
        keep, held = _holdout_rows(labels, cfg.holdout_fraction, child_seed(cfg.seed, 5))
        fit_feats, fit_labels = feats[keep], labels[keep]
        held_feats, held_labels = feats[held], labels[held]
    else:
        fit_feats, fit_labels = feats, labels

    head = None
    if cfg.loss_mode == "cross_entropy":
        head = init_params(
            (cfg.embed_dim, train_ds.class_count), "identity",
            seed=child_seed(cfg.seed, 6),
        )

    pk = PKSpec(cfg.p_classes, cfg.k_samples)
    logs: list[EpochLog] = []
    for e in range(cfg.epochs):
        rate = schedule.rate(e)
        loss_sum = 0.0
        acc_sum = 0.0
        for it in range(cfg.iterations):
            if cfg.loss_mode == "triplet":
                if cfg.mining == "batch_all":
                    z, y, loss, grads = _step_triplet_batch_all(
                        params, tac, fit_feats, fit_labels, pk, cfg, rng
                    )
                else:
                    z, y, loss, grads = _step_triplet_preformed(
                        params, tac, fit_feats, fit_labels, pk, cfg, rng
                    )
                batch_acc = 0.0
            elif cfg.loss_mode == "oim":
                z, y, loss, batch_acc, grads = _step_oim(
                    params, tac, fit_feats, fit_labels, pk, cfg, rng
                )
            else:
                z, y, loss, batch_acc, grads, head_grads = _step_cross_entropy(
                    params, head, tac, fit_feats, fit_labels, pk, cfg, rng
                )
            if not np.isfinite(loss) or not np.all(np.isfinite(z)):
                raise NumericError(
                    f"non-finite loss or embeddings at epoch {epoch_offset + e} "
                    f"iteration {it}"
                )
            params = sgd_step(params, grads, rate)
            if head is not None:
                head = sgd_step(head, head_grads, rate)
            tac = tac_update(tac, z, y, normalize=cfg.tac_normalize)
            loss_sum += loss
            acc_sum += batch_acc

        train_loss = loss_sum / cfg.iterations
        if cfg.loss_mode == "triplet":
            train_acc = episodic_accuracy(
                params, feats, labels, cfg.eval_n_way, cfg.eval_k_shot,
                cfg.eval_q_queries, cfg.eval_episodes,
                master_seed=child_seed(cfg.seed, 4),
            ).mean
            val_acc = episodic_accuracy(
                params, val_ds.features, val_ds.labels, cfg.eval_n_way,
                cfg.eval_k_shot, cfg.eval_q_queries, cfg.eval_episodes,
                master_seed=child_seed(cfg.seed, 3),
            ).mean
        else:
            train_acc = acc_sum / cfg.iterations
            val_acc = _classification_accuracy(
                params, head, tac, held_feats, held_labels, cfg
            )

        emb = EmbeddingBatch(forward(params, feats)[0], labels)
        geom = geometry_stats(emb.features, emb.labels)
        logs.append(
            EpochLog(
                epoch=epoch_offset + e,
                stage=stage,
                lr=rate,
                train_loss=train_loss,
                train_acc=train_acc,
                val_acc=val_acc,
                center_dist=geom.center_distance,
                inter_intra_ratio=geom.ratio,
            )
        )
    return params, tac, logs


def _step_triplet_batch_all(params, tac, feats, labels, pk, cfg, rng):
    idx = pk_batch(feats, labels, pk, rng)
    x, y = feats[idx], labels[idx]
    z, cache = forward(params, x)
    blended, decoys = _perturb(z, y, tac, cfg, rng)
    res = batch_all_triplet_loss(z, blended, y, cfg.triplet)
    grad_z = res.grad_other + _pull_back_anchor_grads(res.grad_anchor, decoys, cfg)
    grads = backward(params, cache, grad_z)
    return z, y, res.loss, grads


def _step_triplet_preformed(params, tac, feats, labels, pk, cfg, rng):
    """Literal pre-formed triplets: batch_size independent (a, p, n) draws,
    anchors blended, the mean of per-triplet hinges minimized."""
    b = pk.batch_size
    n = feats.shape[0]
    a_idx = np.empty(b, dtype=np.int64)
    p_idx = np.empty(b, dtype=np.int64)
    n_idx = np.empty(b, dtype=np.int64)
    for i in range(b):
        a = int(rng.integers(0, n))
        same = np.flatnonzero(labels == labels[a])
        if len(same) < 2:
            raise DataError(f"class {labels[a]} has a single sample; cannot form triplets")
        p = a
        while p == a:
            p = int(same[rng.integers(0, len(same))])
        diff = np.flatnonzero(labels != labels[a])
        a_idx[i], p_idx[i] = a, p
        n_idx[i] = int(diff[rng.integers(0, len(diff))])

    stacked = np.concatenate([a_idx, p_idx, n_idx])
    x, y = feats[stacked], labels[stacked]
    z, cache = forward(params, x)
    za, zp, zn = z[:b], z[b : 2 * b], z[2 * b :]
    blended_a, decoys = _perturb(za, y[:b], tac, cfg, rng)

    diff_p = blended_a - zp
    diff_n = blended_a - zn
    hinge = cfg.triplet.margin + np.sum(diff_p**2, axis=1) - np.sum(diff_n**2, axis=1)
    active = hinge > 0.0
    loss = float(np.maximum(hinge, 0.0).mean())

    w = active[:, None] / b
    ga = 2.0 * w * (zn - zp)
    gp = -2.0 * w * diff_p
    gn = 2.0 * w * diff_n
    grad_z = np.concatenate(
        [_pull_back_anchor_grads(ga, decoys, cfg), gp, gn]
    )
    grads = backward(params, cache, grad_z)
    return z, y, loss, grads


def _step_oim(params, tac, feats, labels, pk, cfg, rng):
    idx = _uniform_batch(feats.shape[0], pk.batch_size, rng)
    x, y = feats[idx], labels[idx]
    z, cache = forward(params, x)
    blended, decoys = _perturb(z, y, tac, cfg, rng)
    logits = oim_scores(tac, blended, cfg.temperature)
    targets = label_smooth(y, tac.num_classes, cfg.label_smoothing)
    loss, glog = cross_entropy(logits, targets, with_grads=True)
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    grad_blended = (glog @ tac.table) / cfg.temperature
    grad_z = _pull_back_anchor_grads(grad_blended, decoys, cfg)
    grads = backward(params, cache, grad_z)
    return z, y, loss, acc, grads


def _step_cross_entropy(params, head, tac, feats, labels, pk, cfg, rng):
    idx = _uniform_batch(feats.shape[0], pk.batch_size, rng)
    x, y = feats[idx], labels[idx]
    z, cache = forward(params, x)
    blended, decoys = _perturb(z, y, tac, cfg, rng)
    logits, head_cache = forward(head, blended)
    targets = label_smooth(y, logits.shape[1], cfg.label_smoothing)
    loss, glog = cross_entropy(logits, targets, with_grads=True)
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    head_grads = backward(head, head_cache, glog)
    grad_blended = input_gradient(head, head_cache, glog)
    grad_z = _pull_back_anchor_grads(grad_blended, decoys, cfg)
    grads = backward(params, cache, grad_z)
    return z, y, loss, acc, grads, head_grads


def _classification_accuracy(params, head, tac, feats, labels, cfg) -> float:
    """Holdout accuracy on raw (unblended) embeddings."""
    if feats.shape[0] == 0:
        return float("nan")
    z, _ = forward(params, feats)
    if cfg.loss_mode == "oim":
        logits = oim_scores(tac, z, cfg.temperature)
    else:
        logits, _ = forward(head, z)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_two_stage(train_ds: Dataset, val_ds: Dataset | None, cfg: TrainConfig):
    """Cross-entropy pretrain, then discard the head, re-derive a fresh
    class table, and continue with triplet training from the stage-1
    encoder. Logs concatenate with stage markers 1 and 2."""
    if cfg.loss_mode != "cross_entropy":
        raise ConfigurationError(
            f"two-stage training starts from cross_entropy, got {cfg.loss_mode!r}"
        )
    if cfg.stage2 is None:
        raise ConfigurationError("two-stage training needs a stage2 config")
    if cfg.stage2.loss_mode != "triplet":
        raise ConfigurationError(
            f"stage2 must use the triplet loss, got {cfg.stage2.loss_mode!r}"
        )
    if cfg.stage2.hidden_dims != cfg.hidden_dims or cfg.stage2.embed_dim != cfg.embed_dim:
        raise ConfigurationError("stage2 must keep the stage-1 encoder architecture")

    stage1_cfg = replace(cfg, stage2=None)
    params, _, logs1 = train(train_ds, val_ds, stage1_cfg, stage=1)
    params2, tac2, logs2 = train(
        train_ds, val_ds, cfg.stage2,
        initial_params=params, stage=2, epoch_offset=cfg.epochs,
    )
    return params2, tac2, logs1 + logs2


def evaluate_checkpoint(
    params: ModelParams,
    tac: ClassTable,
    split: Dataset,
    protocol: str,
    seed: int = 0,
    n_way: int = 5,
    k_shot: int = 1,
    q_queries: int = 15,
    episodes: int = 600,
    temperature: float = 1.0,
    metric: str = "euclidean",
):
    """Metric rows [(name, value, ci95-or-None)] for one protocol.

    episodic: N-way K-shot nearest-prototype accuracy over seeded episodes.
    retrieval: per class the first sample (in row order) queries the rest.
    classification: table-lookup argmax accuracy (the split must carry the
    table's classes).
    """
    if protocol == "episodic":
        res = episodic_accuracy(
            params, split.features, split.labels, n_way, k_shot, q_queries,
            episodes, master_seed=seed, metric=metric,
        )
        return [("episodic_accuracy", res.mean, res.ci95)]
    if protocol == "retrieval":
        z, _ = forward(params, split.features)
        labels = split.labels
        first = {}
        for i, y in enumerate(labels):
            first.setdefault(int(y), i)
        q_rows = np.array(sorted(first.values()), dtype=np.int64)
        g_rows = np.setdiff1d(np.arange(split.size), q_rows)
        if g_rows.size == 0:
            raise DataError("retrieval needs at least one gallery row")
        mean_ap = retrieval_map(
            z[q_rows], labels[q_rows], z[g_rows], labels[g_rows], metric
        )
        rank1 = cmc_rank1(
            z[q_rows], labels[q_rows], z[g_rows], labels[g_rows], metric
        )
        return [("map", mean_ap, None), ("cmc_rank1", rank1, None)]
    if protocol == "classification":
        if split.class_count != tac.num_classes:
            raise ConfigurationError(
                f"split has {split.class_count} classes but the table holds "
                f"{tac.num_classes}"
            )
        z, _ = forward(params, split.features)
        logits = oim_scores(tac, z, temperature)
        acc = float(np.mean(np.argmax(logits, axis=1) == split.labels))
        return [("classification_accuracy", acc, None)]
    raise ConfigurationError(
        f"protocol must be episodic, retrieval, or classification, got {protocol!r}"
    )
