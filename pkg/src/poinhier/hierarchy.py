"""Tree structure over data prototypes via learnable top prototypes.

A triplet ``(i, j, k)`` pairs an anchor prototype with one of its K nearest
neighbours (``j``) and a prototype outside that neighbourhood (``k``).  The
pair ``(i, j)`` is assigned a common ancestor among the top prototypes, and
that ancestor together with ``p_k`` is assigned a higher-level ancestor.  The
hinge loss then asks ``i`` and ``j`` to sit closer to their shared ancestor
than to the higher one, and ``k`` the opposite way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from poinhier.errors import ConfigError
from poinhier.geometry import GeometryConfig, distance_matrix, paired_distances, pairwise_distances
from poinhier.prototypes import LossTerm, PrototypeBank


@dataclass(frozen=True)
class HslConfig:
    K: int = 3
    delta: float = 0.1
    triplets_per_step: Optional[int] = None  # None: one triplet per data prototype
    gumbel_enabled: bool = True

    def validate(self, n_data: int):
        if not (1 <= self.K < n_data - 1):
            raise ConfigError(f"K={self.K} invalid for {n_data} data prototypes")
        if self.delta < 0:
            raise ConfigError("margin must be non-negative")
        if self.triplets_per_step is not None and self.triplets_per_step < 1:
            raise ConfigError("triplets_per_step must be positive")

    def n_triplets(self, n_data: int) -> int:
        return n_data if self.triplets_per_step is None else self.triplets_per_step


@dataclass
class Triplets:
    """Index arrays describing a set of triplets and their selected ancestors."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    lca_ij: np.ndarray
    lca_ijk: np.ndarray

    def __len__(self):
        return len(self.i)

    def permuted(self, order) -> "Triplets":
        return Triplets(*(getattr(self, f)[order] for f in ("i", "j", "k", "lca_ij", "lca_ijk")))


def knn_from_points(points: np.ndarray, K: int, g: GeometryConfig) -> np.ndarray:
    d = pairwise_distances(points, points, g)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :K]


def knn_neighbors(bank: PrototypeBank, K: int) -> np.ndarray:
    """K nearest data prototypes of every data prototype (labels ignored)."""
    if not (1 <= K < bank.n_data):
        raise ConfigError(f"K={K} invalid for {bank.n_data} data prototypes")
    protos, _ = bank.materialize()
    return knn_from_points(protos, K, bank.g)


def _sample_ijk(neighbors: np.ndarray, n_triplets: int, rng: np.random.Generator):
    n = neighbors.shape[0]
    reps = -(-n_triplets // n)
    anchors = np.concatenate([rng.permutation(n) for _ in range(reps)])[:n_triplets]
    i_out, j_out, k_out = [], [], []
    for i in anchors:
        nbrs = neighbors[i]
        outside = np.setdiff1d(np.arange(n), np.append(nbrs, i))
        if outside.size == 0:
            raise ConfigError("no prototype lies outside the neighbourhood")
        i_out.append(i)
        j_out.append(nbrs[rng.integers(len(nbrs))])
        k_out.append(outside[rng.integers(outside.size)])
    return np.array(i_out, dtype=np.int64), np.array(j_out, dtype=np.int64), np.array(k_out, dtype=np.int64)


def sample_triplets(bank: PrototypeBank, cfg: HslConfig, rng: np.random.Generator) -> np.ndarray:
    """Rows of ``(i, j, k)`` with ``j`` in the kNN set of ``i`` and ``k`` outside it."""
    cfg.validate(bank.n_data)
    neighbors = knn_neighbors(bank, cfg.K)
    i, j, k = _sample_ijk(neighbors, cfg.n_triplets(bank.n_data), rng)
    return np.stack([i, j, k], axis=1)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def lca_scores(A: np.ndarray, B: np.ndarray, tops: np.ndarray, g: GeometryConfig) -> np.ndarray:
    """exp(-max(d(a, rho), d(b, rho))) for each row pair and each top prototype."""
    da = pairwise_distances(A, tops, g)
    db = pairwise_distances(B, tops, g)
    return np.exp(-np.maximum(da, db))


def select_lca_batch(A, B, tops, g: GeometryConfig, rng: Optional[np.random.Generator],
                     gumbel_enabled: bool) -> np.ndarray:
    scores = lca_scores(np.atleast_2d(A), np.atleast_2d(B), tops, g)
    if gumbel_enabled:
        if rng is None:
            raise ConfigError("Gumbel selection requires a random generator")
        scores = scores + gumbel_noise(scores.shape, rng)
    return np.argmax(scores, axis=1)


def select_lca(a, b, tops, g: GeometryConfig, rng: Optional[np.random.Generator] = None,
               gumbel_enabled: bool = True) -> int:
    """Index of the top prototype chosen as common ancestor of ``a`` and ``b``."""
    return int(select_lca_batch(a, b, tops, g, rng, gumbel_enabled)[0])


def build_triplets(protos: np.ndarray, tops: np.ndarray, cfg: HslConfig, g: GeometryConfig,
                   rng_triplets: np.random.Generator,
                   rng_gumbel: Optional[np.random.Generator]) -> Triplets:
    """Sample triplets over ``protos`` and select both ancestor levels."""
    cfg.validate(protos.shape[0])
    neighbors = knn_from_points(protos, cfg.K, g)
    i, j, k = _sample_ijk(neighbors, cfg.n_triplets(protos.shape[0]), rng_triplets)
    lca_ij = select_lca_batch(protos[i], protos[j], tops, g, rng_gumbel, cfg.gumbel_enabled)
    lca_ijk = select_lca_batch(tops[lca_ij], protos[k], tops, g, rng_gumbel, cfg.gumbel_enabled)
    return Triplets(i, j, k, lca_ij, lca_ijk)


def hsl_terms(triplets: Triplets, protos: np.ndarray, tops: np.ndarray, delta: float,
              g: GeometryConfig):
    """Hinge loss over triplets; returns (value, grad_protos, grad_tops)."""
    if len(triplets) == 0:
        return 0.0, np.zeros_like(protos), np.zeros_like(tops)
    dist, backward = distance_matrix(protos, tops, g)
    coef = np.zeros_like(dist)  # d loss / d dist[data, top]
    value = 0.0
    near, far = triplets.lca_ij, triplets.lca_ijk
    # (data index, ancestor it should be close to, ancestor it should be far from)
    for idx, close, away in ((triplets.i, near, far), (triplets.j, near, far),
                             (triplets.k, far, near)):
        margin = dist[idx, close] - dist[idx, away] + delta
        active = (margin > 0).astype(np.float64)
        value += float(np.maximum(margin, 0.0).sum())
        np.add.at(coef, (idx, close), active)
        np.add.at(coef, (idx, away), -active)
    gp, gt = backward(coef)
    return value, gp, gt


def loss_hsl(triplets: Triplets, bank: PrototypeBank, cfg: HslConfig) -> LossTerm:
    protos, tops = bank.materialize()
    value, gp, gt = hsl_terms(triplets, protos, tops, cfg.delta, bank.g)
    g_data, g_top = bank.pullback(gp, gt)
    return LossTerm(value, {"theta_data": g_data, "theta_top": g_top})


@dataclass
class LcaReport:
    n_triplets: int
    fraction_consistent: float
    mean_gap: float  # mean of d(p_i, rho_ijk) - d(p_i, rho_ij)

    def as_dict(self):
        return {"n_triplets": self.n_triplets, "fraction_consistent": self.fraction_consistent,
                "mean_gap": self.mean_gap}


def lca_consistency_report(bank: PrototypeBank, cfg: HslConfig, rng: np.random.Generator,
                           n_triplets: int = 1000) -> LcaReport:
    """How often the anchor is closer to its pair ancestor than to the higher one.

    Ancestors are chosen without Gumbel noise.
    """
    protos, tops = bank.materialize()
    cfg.validate(protos.shape[0])
    neighbors = knn_from_points(protos, cfg.K, bank.g)
    i, j, k = _sample_ijk(neighbors, n_triplets, rng)
    return _consistency(protos[i], protos[j], protos[k], tops, bank.g)


def _consistency(pi, pj, pk, tops, g: GeometryConfig) -> LcaReport:
    lca_ij = select_lca_batch(pi, pj, tops, g, None, False)
    lca_ijk = select_lca_batch(tops[lca_ij], pk, tops, g, None, False)
    d_near = paired_distances(pi, tops[lca_ij], g)[0]
    d_far = paired_distances(pi, tops[lca_ijk], g)[0]
    return LcaReport(len(pi), float(np.mean(d_near < d_far)), float(np.mean(d_far - d_near)))


def subcluster_consistency(z: np.ndarray, subcluster_ids: np.ndarray, labels: np.ndarray,
                           tops: np.ndarray, g: GeometryConfig, rng: np.random.Generator,
                           n_triplets: int = 1000) -> LcaReport:
    """Consistency over embedding triplets drawn from ground-truth structure.

    ``i`` and ``j`` are distinct samples of one subcluster and ``k`` a sample of
    the other class.
    """
    i_out, j_out, k_out = [], [], []
    clusters = np.unique(subcluster_ids)
    for _ in range(n_triplets):
        sc = clusters[rng.integers(len(clusters))]
        members = np.flatnonzero(subcluster_ids == sc)
        others = np.flatnonzero(labels != labels[members[0]])
        i, j = rng.choice(members, size=2, replace=False)
        i_out.append(i)
        j_out.append(j)
        k_out.append(others[rng.integers(len(others))])
    return _consistency(z[i_out], z[j_out], z[k_out], tops, g)
