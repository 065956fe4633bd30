"""Seeded finite-difference checks for every primitive and the full loss."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import _seeds, tensor as T
from .loss import FeatureExtractor, loss_mse_feat

# A trial whose relu inputs or maxpool runner-up gaps come closer than this
# to a kink is redrawn; finite differences across a kink measure nothing.
KINK_MARGIN = 1e-4
MAX_REDRAWS = 20


def _n(rng, *shape):
    return rng.standard_normal(shape)


def _case_matmul(rng, g):
    a, b = g.leaf(_n(rng, 2, 3, 4)), g.leaf(_n(rng, 4, 5))
    T.matmul(a, b)
    return [a, b]


def _case_conv2d(rng, g):
    x, w = g.leaf(_n(rng, 2, 3, 5, 5)), g.leaf(_n(rng, 4, 3, 3, 3))
    T.conv2d(x, w)
    return [x, w]


def _case_upsample(rng, g):
    x = g.leaf(_n(rng, 2, 3, 3))
    T.nearest_upsample_2x(x)
    return [x]


def _case_maxpool(rng, g):
    x = g.leaf(_n(rng, 2, 4, 6))
    T.maxpool_2x(x)
    return [x]


def _case_add(rng, g):
    a, b = g.leaf(_n(rng, 3, 4)), g.leaf(_n(rng, 4))
    T.add(a, b)
    return [a, b]


def _case_scale(rng, g):
    x = g.leaf(_n(rng, 3, 4))
    T.scale(x, float(rng.normal()))
    return [x]


def _case_mul(rng, g):
    a, b = g.leaf(_n(rng, 2, 3, 4)), g.leaf(_n(rng, 3, 1))
    T.elementwise_mul(a, b)
    return [a, b]


def _case_relu(rng, g):
    x = g.leaf(_n(rng, 4, 5))
    T.relu(x)
    return [x]


def _case_tanh(rng, g):
    x = g.leaf(_n(rng, 4, 5) * 1.5)
    T.tanh(x)
    return [x]


def _case_softmax(rng, g):
    x = g.leaf(_n(rng, 3, 6) * 2)
    T.softmax_rows(x)
    return [x]


def _case_affine(rng, g):
    x, s, b = g.leaf(_n(rng, 2, 3, 4, 4)), g.leaf(_n(rng, 3)), g.leaf(_n(rng, 3))
    T.affine_channel(x, s, b)
    return [x, s, b]


def _case_reshape(rng, g):
    x = g.leaf(_n(rng, 2, 3, 4))
    T.tanh(T.reshape(x, (6, 4)))
    return [x]


def _case_transpose(rng, g):
    x = g.leaf(_n(rng, 2, 3, 4))
    T.tanh(T.transpose(x))
    return [x]


def _case_reduce_sum(rng, g):
    # small entries keep the tanh of a full sum out of saturation
    x = g.leaf(_n(rng, 2, 3, 4) * 0.2)
    axis = [None, 0, 1, 2, (1, 2)][int(rng.integers(5))]
    T.tanh(T.reduce_sum(x, axis=axis))
    return [x]


def _case_loss(rng, g):
    """Pixel + randconv feature loss against a fixed target."""
    ext = FeatureExtractor("randconv", seed=int(rng.integers(2 ** 31)))
    x = np.tanh(_n(rng, 3, 8, 8))
    y = g.leaf(np.tanh(_n(rng, 3, 8, 8)))
    loss_mse_feat(x, y, ext, float(rng.uniform(0.1, 2.0)))
    return [y]


CASES = {
    "matmul": _case_matmul,
    "conv2d": _case_conv2d,
    "nearest_upsample_2x": _case_upsample,
    "maxpool_2x": _case_maxpool,
    "add": _case_add,
    "scale": _case_scale,
    "elementwise_mul": _case_mul,
    "relu": _case_relu,
    "tanh": _case_tanh,
    "softmax_rows": _case_softmax,
    "affine_channel": _case_affine,
    "reshape": _case_reshape,
    "transpose": _case_transpose,
    "reduce_sum": _case_reduce_sum,
    "loss_mse_feat": _case_loss,
}


@dataclass
class CaseResult:
    name: str
    trials: int
    max_rel: float
    failures: int
    redraws: int

    @property
    def passed(self):
        return self.failures == 0


def check_case(name, seed=0, trials=100, tolerance=1e-6, builder=None, coords=None):
    builder = builder or CASES[name]
    worst, failures, redraws = 0.0, 0, 0
    for t in range(trials):
        for attempt in range(MAX_REDRAWS):
            rng = _seeds.rng(_seeds.GRADCHECK, seed, t, attempt)
            g = T.Graph()
            leaves = builder(rng, g)
            if T.kink_distance(g) >= KINK_MARGIN:
                break
            redraws += 1
        reports = [T.grad_check(g, leaf, tolerance, seed=t, coords=coords) for leaf in leaves]
        rel = max(r.max_rel for r in reports)
        worst = max(worst, rel)
        failures += not all(r.passed for r in reports)
    return CaseResult(name, trials, worst, failures, redraws)


def run_suite(seed=0, trials=100, tolerance=1e-6, names=None):
    return [check_case(n, seed, trials, tolerance) for n in (names or CASES)]


def suite_to_json(results):
    return [dict(asdict(r), passed=r.passed) for r in results]
