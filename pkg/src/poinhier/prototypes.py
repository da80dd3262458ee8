"""Class prototypes in the Poincare ball and the prototype alignment losses.

Prototypes are stored as tangent vectors at the origin (``theta``) and
materialized with :func:`exp_map0`, so plain Adam updates on ``theta`` never
leave the manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from poinhier.errors import InvalidBatch, InvalidDataset, InvalidInput
from poinhier.geometry import (
    GeometryConfig,
    distance_matrix,
    exp_map0,
    exp_map0_vjp,
    paired_distances,
    pairwise_distances,
)

BONAFIDE = 0
SPOOF = 1


@dataclass
class PrototypeBank:
    theta_data: np.ndarray
    class_of: np.ndarray
    theta_top: np.ndarray
    g: GeometryConfig

    def __post_init__(self):
        self.theta_data = np.asarray(self.theta_data, dtype=np.float64)
        self.theta_top = np.asarray(self.theta_top, dtype=np.float64)
        self.class_of = np.asarray(self.class_of, dtype=np.int64)
        if self.theta_data.ndim != 2 or self.theta_top.ndim != 2:
            raise InvalidInput("prototype parameters must be 2-D")
        if self.theta_data.shape[1] != self.theta_top.shape[1]:
            raise InvalidInput("data and top prototypes disagree on dimension")
        if self.class_of.shape != (self.theta_data.shape[0],):
            raise InvalidInput("class_of must have one entry per data prototype")
        if np.any(np.diff(self.class_of) < 0) or not set(self.class_of.tolist()) <= {0, 1}:
            raise InvalidInput("bonafide prototypes must precede spoof prototypes")

    @classmethod
    def init(cls, k_b: int, k_s: int, k_top: int, g: GeometryConfig,
             rng: np.random.Generator, scale: float = 0.01) -> "PrototypeBank":
        theta_data = rng.normal(0.0, scale, size=(k_b + k_s, g.dim))
        theta_top = rng.normal(0.0, scale, size=(k_top, g.dim))
        class_of = np.array([BONAFIDE] * k_b + [SPOOF] * k_s)
        return cls(theta_data, class_of, theta_top, g)

    @property
    def n_data(self) -> int:
        return self.theta_data.shape[0]

    @property
    def n_top(self) -> int:
        return self.theta_top.shape[0]

    def materialize(self) -> tuple[np.ndarray, np.ndarray]:
        """Ball coordinates of the (data, top) prototypes."""
        return exp_map0(self.theta_data, self.g), exp_map0(self.theta_top, self.g)

    def pullback(self, grad_data=None, grad_top=None) -> tuple[np.ndarray, np.ndarray]:
        """Chain ball-point gradients back to the tangent parameters."""
        gd = np.zeros_like(self.theta_data) if grad_data is None \
            else exp_map0_vjp(self.theta_data, grad_data, self.g)
        gt = np.zeros_like(self.theta_top) if grad_top is None \
            else exp_map0_vjp(self.theta_top, grad_top, self.g)
        return gd, gt


@dataclass
class EmbeddingBatch:
    """Ball embeddings of original samples, their augmented views and labels."""

    z: np.ndarray
    z_aug: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.z_aug = np.asarray(self.z_aug, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.z.shape != self.z_aug.shape:
            raise InvalidInput("z and z_aug must share a shape")
        if self.y.shape != (self.z.shape[0],):
            raise InvalidInput("one label per embedding required")
        if not set(np.unique(self.y).tolist()) <= {0, 1}:
            raise InvalidInput("labels must be 0 (bonafide) or 1 (spoof)")

    def __len__(self):
        return self.z.shape[0]


@dataclass
class LossTerm:
    """A scalar loss and its gradients keyed by the quantity differentiated."""

    value: float
    grads: dict = field(default_factory=dict)


def nearest_prototype(z, bank: PrototypeBank, class_filter: int) -> int:
    """Index (into the flattened bank) of the closest prototype of one class."""
    if class_filter not in (BONAFIDE, SPOOF):
        raise InvalidInput("class_filter must be 0 or 1")
    protos, _ = bank.materialize()
    d = pairwise_distances(np.atleast_2d(z), protos, bank.g)[0]
    return int(_nearest_same_class(d[None, :], np.array([class_filter]), bank.class_of)[0])


def _nearest_same_class(d: np.ndarray, y: np.ndarray, class_of: np.ndarray) -> np.ndarray:
    masked = np.where(class_of[None, :] == y[:, None], d, np.inf)
    return np.argmin(masked, axis=1)


def proto_terms(z, y, protos, class_of, g: GeometryConfig):
    """Softmax-over-distances loss; returns (value, grad_z, grad_protos)."""
    d, back = distance_matrix(z, protos, g)
    k = _nearest_same_class(d, y, class_of)
    neg = -d
    shift = neg.max(axis=1, keepdims=True)
    ex = np.exp(neg - shift)
    total = ex.sum(axis=1, keepdims=True)
    lse = (np.log(total) + shift)[:, 0]
    rows = np.arange(len(y))
    value = float(np.sum(d[rows, k] + lse))
    G = -ex / total
    G[rows, k] += 1.0
    gz, gp = back(G)
    return value, gz, gp


def aug_terms(z, z_aug, y, protos, class_of, g: GeometryConfig):
    """Original/augmented alignment loss; returns (value, gz, gz_aug, gprotos)."""
    d = pairwise_distances(z, protos, g)
    k = _nearest_same_class(d, y, class_of)
    pk = protos[k]
    d_pair, gz, gza = paired_distances(z, z_aug, g)
    d_orig, gz_o, gp_o = paired_distances(z, pk, g)
    d_aug, gza_a, gp_a = paired_distances(z_aug, pk, g)
    gap = d_orig - d_aug
    sign = np.sign(gap)[:, None]
    value = float(np.sum(d_pair + np.abs(gap)))
    gz = gz + sign * gz_o
    gza = gza - sign * gza_a
    gp = np.zeros_like(protos)
    np.add.at(gp, k, sign * (gp_o - gp_a))
    return value, gz, gza, gp


def loss_proto(batch: EmbeddingBatch, bank: PrototypeBank) -> LossTerm:
    if len(batch) == 0:
        raise InvalidBatch("empty batch")
    protos, _ = bank.materialize()
    value, gz, gp = proto_terms(batch.z, batch.y, protos, bank.class_of, bank.g)
    g_theta, _ = bank.pullback(gp)
    return LossTerm(value, {"z": gz, "theta_data": g_theta})


def loss_aug(batch: EmbeddingBatch, bank: PrototypeBank) -> LossTerm:
    if len(batch) == 0:
        raise InvalidBatch("empty batch")
    protos, _ = bank.materialize()
    value, gz, gza, gp = aug_terms(batch.z, batch.z_aug, batch.y, protos, bank.class_of, bank.g)
    g_theta, _ = bank.pullback(gp)
    return LossTerm(value, {"z": gz, "z_aug": gza, "theta_data": g_theta})


def loss_ppl(batch: EmbeddingBatch, bank: PrototypeBank) -> LossTerm:
    proto = loss_proto(batch, bank)
    aug = loss_aug(batch, bank)
    grads = {
        "z": proto.grads["z"] + aug.grads["z"],
        "z_aug": aug.grads["z_aug"],
        "theta_data": proto.grads["theta_data"] + aug.grads["theta_data"],
    }
    return LossTerm(proto.value + aug.value, grads)


def bonafide_count(B: int, k_b: int, k_s: int) -> int:
    """Bonafide share of a batch, proportional to the prototype counts.

    Rounds half up.
    """
    return int(np.floor(B * k_b / (k_b + k_s) + 0.5))


def balanced_batch_indices(labels, B: int, k_b: int, k_s: int, rng: np.random.Generator):
    """Draw a batch whose class mix follows the prototype ratio."""
    labels = np.asarray(labels)
    if B < 2:
        raise InvalidInput("batch size must be at least 2")
    if k_b < 1 or k_s < 1:
        raise InvalidInput("prototype counts must be positive")
    pools = [np.flatnonzero(labels == cls) for cls in (BONAFIDE, SPOOF)]
    if any(len(p) == 0 for p in pools):
        raise InvalidDataset("both classes must be present in the sampling pool")
    n_b = bonafide_count(B, k_b, k_s)
    out = []
    for pool, count in zip(pools, (n_b, B - n_b)):
        out.append(rng.choice(pool, size=count, replace=len(pool) < count))
    return out[0], out[1]
