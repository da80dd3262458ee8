"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class TensorCheck:
    name: str
    size: int
    max_rel_err: float
    passed: bool


@dataclass
class GradReport:
    checks: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self, prefix: str = "") -> list:
        return [f"{prefix}{c.name}: {'PASS' if c.passed else 'FAIL'} "
                f"max_rel_err={c.max_rel_err:.3e} (n={c.size})" for c in self.checks]


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Element-wise |a - n| / max(|a|, |n|, floor).

    ``floor`` is 1e-3 of the tensor's largest gradient magnitude (plus 1e-8),
    so entries that are tiny next to the rest of the tensor are judged at the
    tensor's scale instead of against finite-difference round-off.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return a
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    floor = 1e-3 * scale + 1e-8
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f: Callable[[], float], tensor: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros(tensor.shape)
    flat = tensor.reshape(-1)  # view: edits reach ``tensor``
    grad = out.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = f()
        flat[idx] = orig - h
        f_minus = f()
        flat[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return out


def finite_diff_check(loss: Callable[[], tuple], tensors: dict, h: float = 1e-5,
                      tolerance: float = 1e-4, value: Optional[Callable[[], float]] = None) -> GradReport:
    """Compare ``loss()``'s analytic gradients with central differences.

    ``loss`` takes no arguments, reads the arrays in ``tensors`` (mutated in
    place here) and returns ``(value, grads)`` with ``grads`` keyed like
    ``tensors``.  ``value`` is an optional cheaper callable returning only
    the loss, used for the perturbed evaluations.
    """
    _, grads = loss()
    analytic = {name: np.array(grads[name], dtype=np.float64) for name in tensors}
    checks = []
    for name, tensor in tensors.items():
        numeric = numeric_gradient(value or (lambda: float(loss()[0])), tensor, h)
        errs = relative_errors(analytic[name], numeric)
        worst = float(errs.max()) if errs.size else 0.0
        checks.append(TensorCheck(name, int(tensor.size), worst, worst < tolerance))
    return GradReport(checks, tolerance)
