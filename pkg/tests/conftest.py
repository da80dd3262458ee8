import numpy as np
import pytest

from poinhier.geometry import GeometryConfig, exp_map0
from poinhier.gradcheck import numeric_gradient, relative_errors
from poinhier.prototypes import EmbeddingBatch, PrototypeBank


def make_bank(rng, k_b=3, k_s=2, k_top=4, dim=5, c=1.0, spread=0.4):
    g = GeometryConfig(c=c, dim=dim)
    scale = spread / g.sqrt_c
    return PrototypeBank(rng.normal(scale=scale, size=(k_b + k_s, dim)),
                         np.array([0] * k_b + [1] * k_s),
                         rng.normal(scale=scale, size=(k_top, dim)), g)


def make_batch(rng, g, n=8, spread=0.4, aug_noise=0.1):
    scale = spread / g.sqrt_c
    z = exp_map0(rng.normal(scale=scale, size=(n, g.dim)), g)
    za = exp_map0(z + aug_noise * scale * rng.normal(size=(n, g.dim)), g)
    y = np.array([0, 1] * (n // 2) + [0] * (n % 2))
    return EmbeddingBatch(z, za, y)


def assert_grad_matches(loss_fn, tensor, analytic, h=1e-6, tol=1e-5):
    numeric = numeric_gradient(loss_fn, tensor, h)
    errs = relative_errors(analytic, numeric)
    assert errs.max() < tol, (errs.max(), analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
