"""Poincare ball primitives with curvature ``c``.

All routines work on numpy arrays whose last axis is the coordinate axis, so
a single point, a batch of points and a grid of points share one code path.
Computation is carried out in float64 regardless of the input dtype.

The distance at curvature ``c`` is

    d_c(u, v) = arcosh(1 + 2c|u - v|^2 / ((1 - c|u|^2)(1 - c|v|^2))) / sqrt(c)

which is the unit-ball distance evaluated on ``sqrt(c) * u`` and
``sqrt(c) * v`` and rescaled by ``1 / sqrt(c)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from poinhier.errors import InvalidInput, NumericalInstability, ZeroDistanceGradient

# below this value of sqrt(c)*|v| the exp-map Jacobian uses its Taylor series
_SERIES_CUTOFF = 1e-3
# clipped points land a few ulps inside the bound so norm round-off cannot cross it
_CLIP_SHRINK = 1.0 - 8 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class GeometryConfig:
    c: float = 0.01
    eps_ball: float = 1e-5
    dim: int = 160

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise InvalidInput(f"curvature must be positive, got {self.c}")
        if not (0 < self.eps_ball <= 0.01):
            raise InvalidInput(f"eps_ball must lie in (0, 0.01], got {self.eps_ball}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInput(f"dim must be a positive integer, got {self.dim}")

    @cached_property
    def sqrt_c(self) -> float:
        return float(np.sqrt(self.c))

    @cached_property
    def max_norm(self) -> float:
        """Largest Euclidean norm a projected point may have."""
        return (1.0 - self.eps_ball) / self.sqrt_c


def _as_float(x, name="input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return x


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * x).sum(axis=-1))


def project_to_ball(v, g: GeometryConfig) -> np.ndarray:
    """Radially clip ``v`` so that ``sqrt(c)*|v| <= 1 - eps_ball``.

    Rows that already satisfy the bound are returned unchanged.
    """
    v = _as_float(v)
    norm = _norm(v)[..., None]
    limit = g.max_norm * _CLIP_SHRINK
    outside = g.sqrt_c * norm > 1.0 - g.eps_ball
    safe = np.where(outside, norm, 1.0)
    return np.where(outside, v * (limit / safe), v)


def project_vjp(v: np.ndarray, grad_out: np.ndarray, g: GeometryConfig) -> np.ndarray:
    """Pull ``grad_out`` back through :func:`project_to_ball` at ``v``."""
    norm = _norm(v)[..., None]
    outside = g.sqrt_c * norm > 1.0 - g.eps_ball
    safe = np.where(outside, norm, 1.0)
    unit = v / safe
    radial = (unit * grad_out).sum(axis=-1, keepdims=True)
    clipped = (g.max_norm / safe) * (grad_out - radial * unit)
    return np.where(outside, clipped, grad_out)


def _tanh_ratio(x: np.ndarray) -> np.ndarray:
    """tanh(x)/x, equal to 1 at x = 0."""
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.tanh(safe) / safe, 1.0)


def exp_map0(v, g: GeometryConfig) -> np.ndarray:
    """Exponential map at the origin followed by :func:`project_to_ball`."""
    v = _as_float(v, "tangent vector")
    x = g.sqrt_c * _norm(v)[..., None]
    return project_to_ball(_tanh_ratio(x) * v, g)


def exp_map0_vjp(v: np.ndarray, grad_out: np.ndarray, g: GeometryConfig) -> np.ndarray:
    """Vector-Jacobian product of :func:`exp_map0` (projection included)."""
    v = np.asarray(v, dtype=np.float64)
    x = g.sqrt_c * _norm(v)[..., None]
    ratio = _tanh_ratio(x)
    grad = project_vjp(ratio * v, grad_out, g)
    # d/dr [tanh(sr)/(sr)] / r = c * (x sech^2 x - tanh x) / x^3
    xs = np.where(x >= _SERIES_CUTOFF, x, 1.0)
    direct = (xs / np.cosh(xs) ** 2 - np.tanh(xs)) / xs**3
    series = -2.0 / 3.0 + (8.0 / 15.0) * x * x
    curl = g.c * np.where(x >= _SERIES_CUTOFF, direct, series)
    return ratio * grad + curl * (v * grad).sum(axis=-1, keepdims=True) * v


def log_map0(p, g: GeometryConfig) -> np.ndarray:
    """Inverse of :func:`exp_map0` on the open ball."""
    p = _as_float(p, "point")
    x = g.sqrt_c * _norm(p)[..., None]
    if np.any(x >= 1.0):
        raise InvalidInput("point lies outside the Poincare ball")
    safe = np.where(x > 0, x, 0.5)
    scale = np.where(x > 0, np.arctanh(safe) / safe, 1.0)
    return scale * p


def _check_inside(a: np.ndarray, b: np.ndarray):
    if min(a.min(initial=1.0), b.min(initial=1.0)) <= 0.0:
        raise NumericalInstability("point on or outside the ball boundary; distance undefined")


def _distance_terms(u: np.ndarray, v: np.ndarray, g: GeometryConfig):
    diff = u - v
    sq = (diff * diff).sum(axis=-1)
    a = 1.0 - g.c * (u * u).sum(axis=-1)
    b = 1.0 - g.c * (v * v).sum(axis=-1)
    _check_inside(a, b)
    t = 2.0 * g.c * sq / (a * b)
    root = np.sqrt(t * (t + 2.0))
    dist = np.log1p(t + root) / g.sqrt_c
    return dist, sq, a, b, root


def hyperbolic_distance(u, v, g: GeometryConfig) -> np.ndarray:
    """Geodesic distance; broadcasts over leading axes."""
    u = _as_float(u)
    v = _as_float(v)
    return _distance_terms(u, v, g)[0]


def _paired_grads(u, v, g: GeometryConfig):
    """Distance and its gradients for aligned rows; coincident rows get 0."""
    dist, sq, a, b, root = _distance_terms(u, v, g)
    nonzero = root > 0
    coef = np.where(
        nonzero, 4.0 * g.c / (a * b * g.sqrt_c * np.where(nonzero, root, 1.0)), 0.0
    )[..., None]
    cq = (g.c * sq)[..., None]
    gu = coef * ((u - v) + cq * u / a[..., None])
    gv = coef * ((v - u) + cq * v / b[..., None])
    return dist, gu, gv


def dist_grad(u, v, g: GeometryConfig):
    """Return ``(d/du, d/dv)`` of :func:`hyperbolic_distance`."""
    u = _as_float(u)
    v = _as_float(v)
    if np.any(np.all(u == v, axis=-1)):
        raise ZeroDistanceGradient("distance is not differentiable at u == v")
    _, gu, gv = _paired_grads(u, v, g)
    return gu, gv


def pairwise_distances(A, B, g: GeometryConfig) -> np.ndarray:
    """Matrix of distances between the rows of ``A`` and ``B``."""
    A = _as_float(np.atleast_2d(A))
    B = _as_float(np.atleast_2d(B))
    return _distance_terms(A[:, None, :], B[None, :, :], g)[0]


def distance_matrix(
    A: np.ndarray, B: np.ndarray, g: GeometryConfig
) -> tuple[np.ndarray, Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]]:
    """Pairwise distances plus a closure computing the VJP w.r.t. ``A`` and ``B``.

    Coincident pairs contribute a zero subgradient.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    dist, sq, a, b, root = _distance_terms(A[:, None, :], B[None, :, :], g)
    alpha = a[:, 0]
    beta = b[0, :]
    nonzero = root > 0
    coef = np.where(nonzero, 4.0 * g.c / (a * b * g.sqrt_c * np.where(nonzero, root, 1.0)), 0.0)

    def backward(G: np.ndarray):
        W = G * coef
        Wq = g.c * W * sq
        gA = (W.sum(axis=1) + Wq.sum(axis=1) / alpha)[:, None] * A - W @ B
        gB = (W.sum(axis=0) + Wq.sum(axis=0) / beta)[:, None] * B - W.T @ A
        return gA, gB

    return dist, backward


def paired_distances(u: np.ndarray, v: np.ndarray, g: GeometryConfig):
    """Row-aligned distances with gradients (subgradient 0 at coincidence)."""
    return _paired_grads(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64), g)
