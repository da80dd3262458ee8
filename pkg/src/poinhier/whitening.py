"""Variance-masked suppression of feature-dimension similarities.

For a class sub-batch ``Z`` (B x D) each feature dimension is the length-B
column of ``Z``; columns are clipped into the ball and compared with the
hyperbolic distance, giving a D x D similarity matrix.  Entries whose value
changes most between the original and the augmented view are treated as
domain-sensitive and their similarity is pushed down.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from poinhier.errors import InvalidBatch, InvalidInput
from poinhier.geometry import GeometryConfig, distance_matrix, project_to_ball, project_vjp
from poinhier.prototypes import BONAFIDE, SPOOF, EmbeddingBatch, LossTerm

log = logging.getLogger(__name__)


@dataclass
class SimilarityMask:
    bits: np.ndarray
    ratio: float

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def _similarity(Z: np.ndarray, g: GeometryConfig):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise InvalidBatch("similarity needs a 2-D batch with at least two samples")
    # the ball for the columns has dimension B, not the configured D
    cols = Z.T
    rows = project_to_ball(cols, g)
    sigma, back = distance_matrix(rows, rows, g)

    def backward(G):
        ga, gb = back(G)
        return project_vjp(cols, ga + gb, g).T

    return sigma, backward


def dimension_similarity_matrix(Z, g: GeometryConfig) -> np.ndarray:
    """D x D matrix of hyperbolic distances between feature dimensions."""
    return _similarity(Z, g)[0]


def mask_size(D: int, ratio: float) -> int:
    # guard against e.g. 0.3 * 10 evaluating to 2.9999999999999996
    return int(math.floor(D * D * ratio * (1.0 + 1e-12)))


def variance_mask(sigma_org, sigma_aug, k_c: float) -> SimilarityMask:
    """Mark the ``floor(D^2 * k_c)`` entries with the largest cross-view variance.

    Ties go to the earlier entry in row-major order.
    """
    sigma_org = np.asarray(sigma_org, dtype=np.float64)
    sigma_aug = np.asarray(sigma_aug, dtype=np.float64)
    if sigma_org.shape != sigma_aug.shape or sigma_org.ndim != 2 \
            or sigma_org.shape[0] != sigma_org.shape[1]:
        raise InvalidInput("similarity matrices must be square and of equal shape")
    if not 0.0 <= k_c <= 1.0:
        raise InvalidInput("mask ratio must lie in [0, 1]")
    mu = 0.5 * (sigma_org + sigma_aug)
    var = 0.5 * ((sigma_org - mu) ** 2 + (sigma_aug - mu) ** 2)
    count = mask_size(sigma_org.shape[0], k_c)
    order = np.argsort(-var.ravel(), kind="stable")[:count]
    bits = np.zeros(var.size, dtype=bool)
    bits[order] = True
    return SimilarityMask(bits.reshape(var.shape), k_c)


def pfw_terms(z: np.ndarray, z_aug: np.ndarray, y: np.ndarray, g: GeometryConfig,
              k_b: float, k_s: float):
    """Returns (value, grad_z, grad_z_aug, per-class masks)."""
    gz = np.zeros_like(z)
    gza = np.zeros_like(z_aug)
    value = 0.0
    masks = {}
    for cls, ratio in ((BONAFIDE, k_b), (SPOOF, k_s)):
        idx = np.flatnonzero(y == cls)
        if idx.size < 2:
            log.warning("class %d has %d samples in batch; whitening term skipped", cls, idx.size)
            continue
        s_org, back_org = _similarity(z[idx], g)
        s_aug, back_aug = _similarity(z_aug[idx], g)
        mask = variance_mask(s_org, s_aug, ratio)
        masks[cls] = mask
        n = mask.count
        if n == 0:
            continue
        weight = mask.bits / n
        # entries are distances, hence non-negative: |entry| == entry
        value += float(np.sum(s_org[mask.bits]) / n + np.sum(s_aug[mask.bits]) / n)
        gz[idx] += back_org(weight)
        gza[idx] += back_aug(weight)
    return value, gz, gza, masks


def loss_pfw(batch: EmbeddingBatch, g: GeometryConfig, k_b: float, k_s: float) -> LossTerm:
    value, gz, gza, _ = pfw_terms(batch.z, batch.z_aug, batch.y, g, k_b, k_s)
    return LossTerm(value, {"z": gz, "z_aug": gza})
