"""Mini-batch training with balanced batches and per-group Adam."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from poinhier.config import TrainConfig, stream
from poinhier.data import EmbeddingDataset
from poinhier.errors import DivergedError, InvalidDataset, InvalidInput, NumericalInstability
from poinhier.evaluation import eer_from_arrays, spoof_probability
from poinhier.model import GROUP_OF, ModelParams, StepRandom, total_loss
from poinhier.optim import AdamState, adam_step
from poinhier.prototypes import balanced_batch_indices

log = logging.getLogger(__name__)

LOG_TERMS = ("all", "cls", "ppl", "hsl", "pfw")


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)

    def log_json(self) -> str:
        return metrics_json(self.log)


def metrics_json(entries) -> str:
    return json.dumps(entries, indent=1, sort_keys=True) + "\n"


def _check_dataset(ds: EmbeddingDataset):
    if ds.aug_features is None:
        raise InvalidDataset("training needs paired augmented features")
    if ds.n == 0 or len(np.unique(ds.labels)) != 2:
        raise InvalidDataset("training needs samples of both classes")


def train(cfg: TrainConfig, ds: EmbeddingDataset, params: ModelParams | None = None,
          on_epoch=None) -> TrainResult:
    """Train a model on ``ds``; fully determined by ``cfg.seed``.

    Each log entry holds the epoch-mean of every loss term and the EER on the
    training set (original features) at the end of the epoch.
    """
    _check_dataset(ds)
    if params is None:
        params = ModelParams.init(cfg, ds.d_in, stream(cfg.seed, "init"))
    if cfg.epochs == 0:
        return TrainResult(params, [])

    X = ds.features.astype(np.float64)
    Xa = ds.aug_features.astype(np.float64)
    y = ds.labels.astype(np.int64)
    rng_batch = stream(cfg.seed, "batching")
    rand = StepRandom(stream(cfg.seed, "triplets"), stream(cfg.seed, "gumbel"))
    steps = cfg.steps_per_epoch or math.ceil(ds.n / cfg.B)
    lrs = {"projector": cfg.lr_projector, "prototypes": cfg.lr_prototypes, "cls": cfg.lr_cls}
    state = AdamState()
    history = []
    last_good = params.copy()

    for epoch in range(1, cfg.epochs + 1):
        sums = dict.fromkeys(LOG_TERMS, 0.0)
        for _ in range(steps):
            bona, spoof = balanced_batch_indices(y, cfg.B, cfg.K_b, cfg.K_s, rng_batch)
            idx = np.concatenate([bona, spoof])
            try:
                value, grads, parts = total_loss(X[idx], Xa[idx], y[idx], params, cfg, rand)
            except (InvalidInput, NumericalInstability) as exc:
                # parameters were finite before the first step, so this is blow-up
                raise DivergedError(f"training diverged at epoch {epoch}: {exc}",
                                    last_good, history) from exc
            if not np.isfinite(value):
                raise DivergedError(f"non-finite loss at epoch {epoch}", last_good, history)
            last_good = params.copy()
            adam_step(params.tensors(), grads, state, lrs, GROUP_OF, cfg.adam_betas, cfg.adam_eps)
            sums["all"] += value
            for key in ("cls", "ppl", "hsl", "pfw"):
                sums[key] += parts[key]
        entry = {"epoch": epoch}
        entry.update({f"loss_{k}": v / steps for k, v in sums.items()})
        entry["train_eer"] = eer_from_arrays(spoof_probability(X, params), y)[0]
        history.append(entry)
        log.info("epoch %d loss=%.5f eer=%.4f", epoch, entry["loss_all"], entry["train_eer"])
        if on_epoch is not None:
            on_epoch(entry)
    return TrainResult(params, history)
