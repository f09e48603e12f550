"""Seeded synthetic classification data: Gaussian mixtures, exponential
long-tail subsampling, per-class labeled splits, out-of-distribution
injection, and the weak/strong augmentation pair.

Ground-truth labels of unlabeled samples are kept on the Dataset so the
analytics side can score pseudo-labels; nothing on the training path may
read them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .rand import substream

SENTINEL_LABEL = -1  # "unknown class": out-of-distribution samples only

LABELED = "L"
UNLABELED = "U"
OOD = "O"

_FMT = "%.17g"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Dataset:
    """Feature matrix plus per-sample label, origin tag, and class counts.

    labels holds the hidden ground truth for labeled AND unlabeled samples
    (analytics only for the latter); ood rows carry SENTINEL_LABEL and are
    excluded from class_counts.
    """

    features: np.ndarray     # [N, D] float64
    labels: np.ndarray       # [N] int64, SENTINEL_LABEL for ood
    origin: np.ndarray       # [N] one of L/U/O
    class_counts: np.ndarray  # [K] int64, counts over non-ood samples

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.origin.shape != (n,):
            raise ValueError("features, labels, and origin must agree on N")
        k = len(self.class_counts)
        real = self.origin != OOD
        if np.any(self.labels[~real] != SENTINEL_LABEL):
            raise ValueError("ood samples must carry the sentinel label")
        if real.any() and (self.labels[real].min() < 0 or self.labels[real].max() >= k):
            raise ValueError("non-ood labels must lie in [0, K)")
        counted = np.bincount(self.labels[real], minlength=k)
        if not np.array_equal(counted, self.class_counts):
            raise ValueError("class_counts do not match the stored labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    def indices(self, *origins) -> np.ndarray:
        return np.flatnonzero(np.isin(self.origin, origins))


@dataclass(frozen=True)
class ImbalanceSpec:
    """Exponential class-count profile: count of class k decays from n1 by
    gamma^(-(k-1)/(K-1)), so the first/last ratio is gamma."""

    gamma: float
    n1: int
    K: int
    labeled_fraction: float = 1.0

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("imbalance ratio gamma must be >= 1")
        if self.K < 2:
            raise ValueError("need at least two classes")
        if self.n1 < 1:
            raise ValueError("n1 must be positive")
        if not (0.0 < self.labeled_fraction <= 1.0):
            raise ValueError("labeled_fraction must be in (0, 1]")


@dataclass(frozen=True)
class AugmentSpec:
    """Weak view: isotropic jitter. Strong view: harsher jitter plus feature
    dropout. The strong view must dominate the weak one."""

    weak_sigma: float
    strong_sigma: float
    strong_dropout: float = 0.0

    def __post_init__(self):
        if self.weak_sigma < 0:
            raise ValueError("weak_sigma must be nonnegative")
        if self.strong_sigma < self.weak_sigma:
            raise ValueError("strong_sigma must be >= weak_sigma")
        if not (0.0 <= self.strong_dropout < 1.0):
            raise ValueError("strong_dropout must be in [0, 1)")


def make_mixture(K, D, means, scales, n_per_class, seed) -> Dataset:
    """Isotropic Gaussian blobs, n_per_class[k] samples at means[k].

    Everything starts tagged labeled; split_labeled reassigns. Deterministic
    under seed.
    """
    means = np.asarray(means, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    n_per_class = np.asarray(n_per_class, dtype=np.int64)
    if K < 2:
        raise ValueError("need at least two classes")
    if means.shape != (K, D):
        raise ValueError(f"means must be {K}x{D}, got {means.shape}")
    if scales.shape != (K,) or np.any(scales <= 0):
        raise ValueError("need one positive scale per class")
    if n_per_class.shape != (K,) or np.any(n_per_class <= 0):
        raise ValueError("per-class counts must be positive")

    rng = substream(seed, "mixture")
    blocks, labels = [], []
    for k in range(K):
        blocks.append(means[k] + scales[k] * rng.standard_normal((n_per_class[k], D)))
        labels.append(np.full(n_per_class[k], k, dtype=np.int64))
    features = np.concatenate(blocks, axis=0)
    labels = np.concatenate(labels)
    origin = np.full(features.shape[0], LABELED, dtype="<U1")
    return Dataset(features, labels, origin, n_per_class.copy())


def class_means(K: int, D: int, separation: float, seed) -> np.ndarray:
    """K class means on orthonormal directions scaled by `separation`, so
    every pair sits separation*sqrt(2) apart. Needs D >= K."""
    if D < K:
        raise ValueError("dim must be >= classes for orthonormal class means")
    rng = substream(seed, "means")
    q, _ = np.linalg.qr(rng.standard_normal((D, K)))
    return separation * q.T


def longtail_counts(spec: ImbalanceSpec) -> np.ndarray:
    """Per-class counts n1 * gamma^(-(k-1)/(K-1)), rounded half-up, floor 1."""
    counts = np.empty(spec.K, dtype=np.int64)
    for k in range(spec.K):
        raw = spec.n1 * spec.gamma ** (-k / (spec.K - 1))
        counts[k] = max(1, _round_half_up(raw))
    return counts


def split_labeled(ds: Dataset, fraction: float, seed) -> Dataset:
    """Tag round(fraction * N_k) samples per class (at least 1) as labeled,
    the rest unlabeled; both partitions keep the class profile."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    rng = substream(seed, "split")
    origin = ds.origin.copy()
    for k in range(ds.num_classes):
        idx = np.flatnonzero((ds.labels == k) & (ds.origin != OOD))
        if idx.size == 0:
            continue
        n_lab = min(idx.size, max(1, _round_half_up(fraction * idx.size)))
        chosen = rng.choice(idx, size=n_lab, replace=False)
        origin[idx] = UNLABELED
        origin[chosen] = LABELED
    return replace(ds, features=ds.features.copy(), labels=ds.labels.copy(),
                   origin=origin, class_counts=ds.class_counts.copy())


@dataclass(frozen=True)
class OodSpec:
    """Isotropic Gaussian for true out-of-distribution samples. Keep the
    mean far from every class mean (>= 10 mixture scales by default) so
    'out-of-distribution' is unambiguous."""

    mean: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("ood scale must be positive")


def default_ood_spec(means, scales, margin: float = 10.0) -> OodSpec:
    """Place the ood cluster so its mean is >= margin*max(scale) from every
    class mean, along a fixed direction from the mixture centroid."""
    means = np.asarray(means, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    centroid = means.mean(axis=0)
    radius = float(np.max(np.linalg.norm(means - centroid, axis=1)))
    direction = np.ones(means.shape[1]) / math.sqrt(means.shape[1])
    mean = centroid + direction * (radius + margin * float(scales.max()))
    return OodSpec(mean=mean, scale=float(scales.max()))


def inject_ood(ds: Dataset, n_ood: int, generator: OodSpec, seed) -> Dataset:
    """Append n_ood sentinel-labeled, ood-tagged samples from `generator`."""
    if n_ood < 0:
        raise ValueError("n_ood must be nonnegative")
    features = ds.features.copy()
    labels = ds.labels.copy()
    origin = ds.origin.copy()
    if n_ood > 0:
        rng = substream(seed, "ood")
        extra = generator.mean + generator.scale * rng.standard_normal((n_ood, ds.dim))
        features = np.concatenate([features, extra], axis=0)
        labels = np.concatenate([labels, np.full(n_ood, SENTINEL_LABEL, dtype=np.int64)])
        origin = np.concatenate([origin, np.full(n_ood, OOD, dtype="<U1")])
    return Dataset(features, labels, origin, ds.class_counts.copy())


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def weak_view(x: np.ndarray, spec: AugmentSpec, seed) -> np.ndarray:
    rng = _as_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    return x + spec.weak_sigma * rng.standard_normal(x.shape)


def strong_view(x: np.ndarray, spec: AugmentSpec, seed) -> np.ndarray:
    """Jitter at strong_sigma, then zero each feature with prob strong_dropout."""
    rng = _as_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    out = x + spec.strong_sigma * rng.standard_normal(x.shape)
    if spec.strong_dropout > 0.0:
        out = np.where(rng.random(x.shape) < spec.strong_dropout, 0.0, out)
    return out


# ---------------------------------------------------------------------------
# Flat text serialization: header "N D K", one line per sample
# (D floats, integer label with -1 sentinel, origin char L/U/O).
# 17 significant digits round-trip float64 exactly.
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{ds.n} {ds.dim} {ds.num_classes}\n")
        for i in range(ds.n):
            row = " ".join(_FMT % v for v in ds.features[i])
            fh.write(f"{row} {ds.labels[i]} {ds.origin[i]}\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed dataset header")
        n, d, k = (int(v) for v in header)
        features = np.empty((n, d), dtype=np.float64)
        labels = np.empty(n, dtype=np.int64)
        origin = np.empty(n, dtype="<U1")
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != d + 2:
                raise ValueError(f"{path}: sample line {i} has {len(parts)} fields, expected {d + 2}")
            features[i] = [float(v) for v in parts[:d]]
            labels[i] = int(parts[d])
            origin[i] = parts[d + 1]
    real = origin != OOD
    class_counts = np.bincount(labels[real], minlength=k)
    return Dataset(features, labels, origin, class_counts)
