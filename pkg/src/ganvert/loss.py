"""Reconstruction loss: pixel squared error plus squared feature distance.

Squared errors use the sum convention (``||x - y||_2^2``), so the weights
below depend on image resolution.  All functions work on arrays or tape
nodes; ``batch=True`` keeps a leading batch axis and returns one value per
sample.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from . import _seeds, tensor as T


@dataclass(frozen=True)
class LossConfig:
    lambda_feat: float = 1.0
    lambda1: float = 0.01
    lambda2: float = 0.05

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FeatureExtractor:
    """Image features C(x) for the perceptual term.

    ``pixel`` returns the input unchanged.  ``randconv`` is two seeded 3x3
    conv layers (8 then 16 channels), each followed by 2x max pooling and
    relu, flattened.
    """

    kind: str = "randconv"
    seed: int = 0
    in_channels: int = 3
    weights: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        if self.kind not in ("pixel", "randconv"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "randconv":
            rng = _seeds.rng(_seeds.EXTRACTOR, self.seed)
            w1 = rng.standard_normal((8, self.in_channels, 3, 3)) / math.sqrt(9 * self.in_channels)
            w2 = rng.standard_normal((16, 8, 3, 3)) / math.sqrt(72)
            for w in (w1, w2):
                w.setflags(write=False)
            object.__setattr__(self, "weights", (w1, w2))

    def __call__(self, x):
        if self.kind == "pixel":
            return x
        shape = T.value(x).shape
        if len(shape) < 3 or shape[-3] != self.in_channels or shape[-1] % 4 or shape[-2] % 4:
            raise T.ShapeError("randconv", f"need (..., {self.in_channels}, H, W) with H, W divisible by 4, got {shape}")
        for w in self.weights:
            x = T.relu(T.maxpool_2x(T.conv2d(x, w)))
        s = T.value(x).shape
        return T.reshape(x, s[:-3] + (s[-3] * s[-2] * s[-1],))


def _sq_sum(d, batch):
    sq = T.elementwise_mul(d, d)
    if not batch:
        return T.reduce_sum(sq)
    nd = T.value(sq).ndim
    return T.reduce_sum(sq, axis=tuple(range(1, nd)))


def mse(x, y, batch=False):
    """Sum of squared differences."""
    xs, ys = T.value(x).shape, T.value(y).shape
    if xs != ys and not (batch and xs == ys[1:]) and not (batch and ys == xs[1:]):
        raise T.ShapeError("mse", f"shapes differ: {xs} vs {ys}")
    return _sq_sum(T.sub(x, y), batch)


def feature_distance(fx, fy, batch=False):
    return _sq_sum(T.sub(fx, fy), batch)


def loss_mse_feat(x, y, extractor, lambda_feat, batch=False, target_features=None):
    """``||x - y||^2 + lambda_feat * ||C(x) - C(y)||^2``.

    ``x`` is the target.  Pass ``target_features`` to skip recomputing C(x).
    """
    pix = mse(x, y, batch)
    if lambda_feat == 0:
        return pix
    fx = extractor(x) if target_features is None else target_features
    return T.add(pix, T.scale(feature_distance(fx, extractor(y), batch), lambda_feat))


def latent_prior_penalty(z, batch=False):
    """``||z||^2``: the Gaussian negative log-density up to constants folded into lambda1."""
    return _sq_sum(z, batch)


def l1_penalty(delta):
    return float(np.abs(np.asarray(delta, dtype=np.float64)).sum())


def soft_threshold(x, t):
    # adding 0.0 turns the -0.0 of thresholded negative entries into +0.0
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0) + 0.0


def relative_mse(recon, target):
    """``||recon - target||^2 / ||target||^2``."""
    recon = np.asarray(recon)
    target = np.asarray(target)
    return float(((recon - target) ** 2).sum() / max((target ** 2).sum(), 1e-300))
