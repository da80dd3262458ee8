"""Embedding datasets: the PHE1 binary format and a synthetic generator.

PHE1 layout (all integers little-endian)::

    magic       4 bytes  b"PHE1"
    version     uint32   1
    n           uint32
    d_in        uint32
    has_aug     uint8
    has_sub     uint8
    labels      n x uint8
    features    n * d_in x float32
    aug         n * d_in x float32       (if has_aug)
    subclusters n x uint32               (if has_sub)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from poinhier.errors import FormatError, InvalidDataset, InvalidInput, UnsupportedVersion
from poinhier.io import atomic_write

MAGIC = b"PHE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBB")


@dataclass
class EmbeddingDataset:
    features: np.ndarray
    labels: np.ndarray
    aug_features: Optional[np.ndarray] = None
    subcluster_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 2:
            raise InvalidDataset("features must be an n x d_in matrix")
        if self.labels.shape != (self.n,):
            raise InvalidDataset("one label per sample required")
        if np.any(self.labels > 1):
            raise InvalidDataset("labels must be 0 (bonafide) or 1 (spoof)")
        if self.aug_features is not None:
            self.aug_features = np.asarray(self.aug_features, dtype=np.float32)
            if self.aug_features.shape != self.features.shape:
                raise InvalidDataset("augmented features must match features in shape")
        if self.subcluster_ids is not None:
            self.subcluster_ids = np.asarray(self.subcluster_ids, dtype=np.uint32)
            if self.subcluster_ids.shape != (self.n,):
                raise InvalidDataset("one subcluster id per sample required")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "EmbeddingDataset":
        idx = np.asarray(idx)
        return EmbeddingDataset(
            self.features[idx], self.labels[idx],
            None if self.aug_features is None else self.aug_features[idx],
            None if self.subcluster_ids is None else self.subcluster_ids[idx],
        )

    def equals(self, other: "EmbeddingDataset") -> bool:
        """Bit-exact equality of all blocks."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()
        return (same(self.features, other.features) and same(self.labels, other.labels)
                and same(self.aug_features, other.aug_features)
                and same(self.subcluster_ids, other.subcluster_ids))


def dataset_to_bytes(ds: EmbeddingDataset) -> bytes:
    parts = [
        _HEADER.pack(MAGIC, VERSION, ds.n, ds.d_in, ds.aug_features is not None,
                     ds.subcluster_ids is not None),
        ds.labels.astype("u1").tobytes(),
        ds.features.astype("<f4").tobytes(),
    ]
    if ds.aug_features is not None:
        parts.append(ds.aug_features.astype("<f4").tobytes())
    if ds.subcluster_ids is not None:
        parts.append(ds.subcluster_ids.astype("<u4").tobytes())
    return b"".join(parts)


def dataset_from_bytes(data: bytes) -> EmbeddingDataset:
    if len(data) < _HEADER.size:
        raise FormatError("file too short for a PHE1 header")
    magic, version, n, d_in, has_aug, has_sub = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad magic; not a PHE1 file")
    if version != VERSION:
        raise UnsupportedVersion(f"PHE1 version {version} not supported")
    if has_aug > 1 or has_sub > 1:
        raise FormatError("flag bytes must be 0 or 1")
    expected = _HEADER.size + n + 4 * n * d_in * (1 + has_aug) + 4 * n * has_sub
    if len(data) != expected:
        raise FormatError(f"payload is {len(data)} bytes, header declares {expected}")
    offset = _HEADER.size
    labels = np.frombuffer(data, dtype="u1", count=n, offset=offset)
    offset += n
    features = np.frombuffer(data, dtype="<f4", count=n * d_in, offset=offset).reshape(n, d_in)
    offset += 4 * n * d_in
    aug = None
    if has_aug:
        aug = np.frombuffer(data, dtype="<f4", count=n * d_in, offset=offset).reshape(n, d_in)
        offset += 4 * n * d_in
    sub = None
    if has_sub:
        sub = np.frombuffer(data, dtype="<u4", count=n, offset=offset)
    try:
        return EmbeddingDataset(features.copy(), labels.copy(),
                                None if aug is None else aug.copy(),
                                None if sub is None else sub.copy())
    except InvalidDataset as exc:
        raise FormatError(str(exc)) from exc


def write_dataset(ds: EmbeddingDataset, path):
    with atomic_write(path) as fh:
        fh.write(dataset_to_bytes(ds))


def read_dataset(path) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


@dataclass(frozen=True)
class SynthConfig:
    n_per_subcluster: int = 250
    subclusters_per_class: int = 4
    d_in: int = 32
    class_separation: float = 6.0
    subcluster_spread: float = 2.0
    noise_sigma: float = 0.5
    aug_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_per_subcluster < 1 or self.subclusters_per_class < 1 or self.d_in < 1:
            raise InvalidInput("counts and dimension must be positive")
        if min(self.class_separation, self.subcluster_spread) <= 0:
            raise InvalidInput("separation and spread must be positive")
        if min(self.noise_sigma, self.aug_sigma) < 0:
            raise InvalidInput("noise scales must be non-negative")


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def generate_synthetic(cfg: SynthConfig) -> EmbeddingDataset:
    """Two classes, each a mixture of Gaussian subclusters around a class center.

    Class centers sit at +-class_separation/2 along a random direction and each
    subcluster center lies ``subcluster_spread`` away from its class center.
    Samples are ordered class by class and subcluster by subcluster.
    """
    rng = np.random.default_rng(cfg.seed)
    axis = _unit(rng, cfg.d_in)
    feats, augs, labels, subs = [], [], [], []
    for cls in (0, 1):
        center = (cls - 0.5) * cfg.class_separation * axis
        for s in range(cfg.subclusters_per_class):
            sub_center = center + cfg.subcluster_spread * _unit(rng, cfg.d_in)
            x = sub_center + cfg.noise_sigma * rng.normal(size=(cfg.n_per_subcluster, cfg.d_in))
            xa = x + cfg.aug_sigma * rng.normal(size=x.shape)
            feats.append(x)
            augs.append(xa)
            labels.append(np.full(cfg.n_per_subcluster, cls))
            subs.append(np.full(cfg.n_per_subcluster, cls * cfg.subclusters_per_class + s))
    return EmbeddingDataset(np.concatenate(feats), np.concatenate(labels),
                            np.concatenate(augs), np.concatenate(subs))


def augment_pair(ds: EmbeddingDataset, aug_sigma: float, seed: int) -> EmbeddingDataset:
    """Attach additive-Gaussian augmented views to a dataset that lacks them."""
    if ds.aug_features is not None:
        raise InvalidInput("dataset already carries augmented features")
    if aug_sigma < 0:
        raise InvalidInput("aug_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    x = ds.features.astype(np.float64)
    aug = x + aug_sigma * rng.normal(size=x.shape)
    return EmbeddingDataset(ds.features, ds.labels, aug, ds.subcluster_ids)


def stratified_split(ds: EmbeddingDataset, holdout_fraction: float, rng: np.random.Generator):
    """Return ``(train, holdout)`` with the class ratio kept in both parts."""
    if not 0 < holdout_fraction < 1:
        raise InvalidInput("holdout_fraction must lie in (0, 1)")
    held = []
    for cls in (0, 1):
        idx = np.flatnonzero(ds.labels == cls)
        n_held = int(round(len(idx) * holdout_fraction))
        held.append(rng.permutation(idx)[:n_held])
    held = np.sort(np.concatenate(held))
    train = np.setdiff1d(np.arange(ds.n), held)
    return ds.subset(train), ds.subset(held)
