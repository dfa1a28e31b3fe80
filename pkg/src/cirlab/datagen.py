"""Synthetic labeled datasets with controllable class overlap.

Gaussian clusters around uniformly placed centers, with optional fixed
random mixing nonlinearity and label noise as overfit-pressure knobs, plus
class-disjoint train/val/test splitting and a small binary file format.

File format `CIRD`: magic, little-endian u32 version, u32 n, u32 d_in,
u32 C, then n records of (u32 label, d_in x f32 features), then the
generator provenance as a UTF-8 footer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

MAGIC = b"CIRD"
VERSION = 1

NONLINEARITIES = ("none", "rotate_mix")

# default spec for the reproduction experiments: small classes, mixing
# nonlinearity, and label noise so an unregularized model can overfit
REPRODUCE_SPEC = dict(
    num_classes=40,
    samples_per_class=25,
    input_dim=32,
    spread=1.0,
    center_scale=2.0,
    nonlinearity="rotate_mix",
    label_noise_rate=0.1,
)


@dataclass(frozen=True)
class GeneratorSpec:
    num_classes: int
    samples_per_class: int
    input_dim: int
    spread: float = 1.0
    center_scale: float = 2.0
    nonlinearity: str = "none"
    label_noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(
                f"num_classes must be >= 2, got {self.num_classes}"
            )
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be >= 1")
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.spread <= 0:
            raise ConfigurationError(f"spread must be > 0, got {self.spread}")
        if self.center_scale < 0:
            raise ConfigurationError("center_scale must be >= 0")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigurationError(
                f"nonlinearity must be one of {NONLINEARITIES}, got {self.nonlinearity!r}"
            )
        if not 0.0 <= self.label_noise_rate < 1.0:
            raise ConfigurationError(
                f"label_noise_rate must lie in [0, 1), got {self.label_noise_rate}"
            )

    def describe(self) -> str:
        return (
            f"gaussian_mixture classes={self.num_classes} "
            f"per_class={self.samples_per_class} dim={self.input_dim} "
            f"spread={self.spread} center_scale={self.center_scale} "
            f"nonlinearity={self.nonlinearity} "
            f"label_noise={self.label_noise_rate} seed={self.seed}"
        )


@dataclass
class Dataset:
    """features: n x d_in float32; labels: n int64 in [0, class_count);
    class_map holds the original class id behind each relabeled id when the
    dataset is a split of another."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str
    class_map: tuple[int, ...] | None = None

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


def reproduce_spec(seed: int = 0) -> GeneratorSpec:
    return GeneratorSpec(seed=seed, **REPRODUCE_SPEC)


def gen_gaussian_mixture(spec: GeneratorSpec) -> Dataset:
    """Sample the mixture dataset described by spec, fully seed-determined.

    Centers are uniform in [-center_scale, center_scale]^d; each sample is
    its center plus N(0, spread^2 I). rotate_mix then applies a fixed
    random linear mix, tanh, and a random rotation. Label noise reassigns
    a round(rate * n) subset of labels uniformly to wrong classes.
    """
    rng = np.random.default_rng(spec.seed)
    c, per, d = spec.num_classes, spec.samples_per_class, spec.input_dim
    n = c * per
    centers = rng.uniform(-spec.center_scale, spec.center_scale, size=(c, d))
    labels = np.repeat(np.arange(c, dtype=np.int64), per)
    feats = centers[labels] + rng.normal(0.0, spec.spread, size=(n, d))

    if spec.nonlinearity == "rotate_mix":
        mix = rng.normal(0.0, 1.0, size=(d, d)) / np.sqrt(d)
        rot, _ = np.linalg.qr(rng.normal(size=(d, d)))
        feats = np.tanh(feats @ mix.T) @ rot.T

    n_noise = int(round(spec.label_noise_rate * n))
    if n_noise:
        noisy = rng.choice(n, size=n_noise, replace=False)
        for i in noisy:
            k = int(rng.integers(0, c - 1))
            labels[i] = k + (1 if k >= labels[i] else 0)

    counts = np.bincount(labels, minlength=c)
    if (counts == 0).any():
        raise DataError(
            f"label noise emptied classes {np.flatnonzero(counts == 0).tolist()}; "
            "pick another seed or lower the rate"
        )
    return Dataset(
        features=feats.astype(np.float32),
        labels=labels,
        class_count=c,
        provenance=spec.describe(),
    )


def split_classes(
    ds: Dataset, fractions: tuple[float, float, float], seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition the class set into train/val/test by the given fractions.

    Class ids are permuted by seed; the first floor(f_train * C) go to
    train, the next floor(f_val * C) to val, the rest to test. Each split
    relabels its classes to 0..C_split-1 (sampled order) and records the
    original ids in class_map.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigurationError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(fractions)}")
    c = ds.class_count
    n_train = int(np.floor(fractions[0] * c))
    n_val = int(np.floor(fractions[1] * c))
    n_test = c - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigurationError(
            f"every split needs >= 1 class; fractions {fractions} over {c} "
            f"classes give {n_train}/{n_val}/{n_test}"
        )

    perm = np.random.default_rng(seed).permutation(c)
    groups = (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )
    names = ("train", "val", "test")
    out = []
    for name, group in zip(names, groups):
        relabel = {int(orig): new for new, orig in enumerate(group)}
        mask = np.isin(ds.labels, group)
        labels = np.array([relabel[int(y)] for y in ds.labels[mask]], dtype=np.int64)
        out.append(
            Dataset(
                features=ds.features[mask].copy(),
                labels=labels,
                class_count=len(group),
                provenance=f"{ds.provenance} | split={name} split_seed={seed}",
                class_map=tuple(int(g) for g in group),
            )
        )
    return tuple(out)


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the CIRD binary format (see module docstring)."""
    feats = np.ascontiguousarray(ds.features, dtype="<f4")
    labels = np.asarray(ds.labels, dtype="<u4")
    n, d = feats.shape
    rec = np.dtype([("label", "<u4"), ("feat", "<f4", (d,))])
    records = np.empty(n, dtype=rec)
    records["label"] = labels
    records["feat"] = feats
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, n, d, ds.class_count))
        fh.write(records.tobytes())
        fh.write(ds.provenance.encode("utf-8"))


def load_dataset(path: str) -> Dataset:
    """Read a CIRD file back; inverse of save_dataset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a CIRD dataset file")
    version, n, d, c = struct.unpack("<IIII", blob[4:20])
    if version != VERSION:
        raise DataError(f"{path}: unsupported CIRD version {version}")
    rec = np.dtype([("label", "<u4"), ("feat", "<f4", (d,))])
    body_end = 20 + n * rec.itemsize
    if len(blob) < body_end:
        raise DataError(f"{path}: truncated CIRD file")
    records = np.frombuffer(blob[20:body_end], dtype=rec)
    labels = records["label"].astype(np.int64)
    if labels.size and labels.max() >= c:
        raise DataError(f"{path}: label {labels.max()} outside class count {c}")
    return Dataset(
        features=records["feat"].copy(),
        labels=labels,
        class_count=c,
        provenance=blob[body_end:].decode("utf-8"),
    )
