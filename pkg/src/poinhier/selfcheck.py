"""Finite-difference suite over every loss term at small shapes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from poinhier.config import TrainConfig
from poinhier.geometry import GeometryConfig
from poinhier.gradcheck import GradReport, finite_diff_check
from poinhier.hierarchy import HslConfig
from poinhier.model import ModelParams, StepRandom, total_loss

SUITE_TERMS = {
    "L_proto": ("proto",),
    "L_aug": ("aug",),
    "L_HSL": ("hsl",),
    "L_PFW": ("pfw",),
    "L_cls": ("cls",),
    "L_all": ("cls", "proto", "aug", "hsl", "pfw"),
}


def suite_config(c: float = 0.01) -> TrainConfig:
    # At D = 8 the default mask ratios select floor(64 * 0.003) = 0 entries,
    # which would make the whitening check vacuous; these ratios select 6 and 3.
    return TrainConfig(g=GeometryConfig(c=c, dim=8), K_b=3, K_s=2, K_top=4, B=8,
                       k_b=0.1, k_s=0.05, hsl=HslConfig(K=2))


@dataclass
class SuiteState:
    cfg: TrainConfig
    params: ModelParams
    X: np.ndarray
    X_aug: np.ndarray
    y: np.ndarray
    triplets: object


def random_state(seed: int, cfg: TrainConfig | None = None, d_in: int = 12) -> SuiteState:
    """Random parameters spread over the ball and a fixed batch of size B."""
    cfg = cfg or suite_config()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 777]))
    params = ModelParams.init(cfg, d_in, rng)
    spread = 0.3 / cfg.g.sqrt_c
    params.bank.theta_data[:] = rng.normal(0.0, spread, params.bank.theta_data.shape)
    params.bank.theta_top[:] = rng.normal(0.0, spread, params.bank.theta_top.shape)
    params.projector_bias[:] = rng.normal(0.0, spread / 4, params.projector_bias.shape)
    params.cls_weight[:] = rng.normal(size=params.cls_weight.shape)
    params.cls_bias[...] = rng.normal()
    n_b = cfg.B // 2
    X = rng.normal(size=(cfg.B, d_in))
    X_aug = X + 0.3 * rng.normal(size=X.shape)
    y = np.array([0] * n_b + [1] * (cfg.B - n_b))
    # triplets and ancestors are sampled once so the objective is a fixed function
    _, _, parts = total_loss(X, X_aug, y, params, cfg, StepRandom(rng, rng), terms=("hsl",))
    return SuiteState(cfg, params, X, X_aug, y, parts["triplets"])


def check_state(state: SuiteState, terms: tuple, h: float = 1e-5, tolerance: float = 1e-4) -> GradReport:
    def loss():
        value, grads, _ = total_loss(state.X, state.X_aug, state.y, state.params, state.cfg,
                                     triplets=state.triplets, terms=terms)
        return value, grads

    def value_only():
        return total_loss(state.X, state.X_aug, state.y, state.params, state.cfg,
                          triplets=state.triplets, terms=terms, need_grad=False)[0]

    return finite_diff_check(loss, state.params.tensors(), h, tolerance, value_only)


def run_suite(seed: int = 0, n_states: int = 20, h: float = 1e-5, tolerance: float = 1e-4,
              c: float = 0.01) -> dict:
    """Worst relative error per (term, tensor) across ``n_states`` random states.

    Returns ``{term: GradReport}`` where each check holds the maximum error
    seen for that tensor over all states.
    """
    worst: dict = {}
    for k in range(n_states):
        state = random_state(seed * 100_003 + k, suite_config(c))
        for name, terms in SUITE_TERMS.items():
            rep = check_state(state, terms, h, tolerance)
            if name not in worst:
                worst[name] = rep
                continue
            for best, new in zip(worst[name].checks, rep.checks):
                if new.max_rel_err > best.max_rel_err:
                    best.max_rel_err = new.max_rel_err
                best.passed = best.passed and new.passed
    return worst


def suite_lines(results: dict) -> list:
    lines = []
    for name, rep in results.items():
        lines.extend(rep.lines(prefix=f"{name} "))
    return lines
