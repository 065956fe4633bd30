"""Split generator G(z) = G2(G1(z)).

G1 is the first dense layer, ``h = W1 z + b1``.  G2 reshapes ``h`` to a
small feature map and runs upsample/conv stages with one embedded-Gaussian
non-local block, ending in a tanh image.  Every forward function accepts
plain arrays or tape nodes, with an optional leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import cached_property
import math

import numpy as np

from . import _seeds, tensor as T, weightfile


class RankDeficientError(ValueError):
    """W1 does not have full column rank."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    d_z: int = 16
    dense_out: tuple = (32, 4, 4)
    block_channels: tuple = (16, 16)
    attention_stage: int = 1
    attention_subsample: int = 2
    out_channels: int = 3
    out_resolution: int = 16

    def __post_init__(self):
        object.__setattr__(self, "dense_out", tuple(int(v) for v in self.dense_out))
        object.__setattr__(self, "block_channels", tuple(int(v) for v in self.block_channels))
        self.validate()

    @property
    def d_1(self):
        c, h, w = self.dense_out
        return c * h * w

    @property
    def n_stages(self):
        return len(self.block_channels)

    @property
    def attention_channels(self):
        """Channel count at the attention block's input."""
        if self.attention_stage == 0:
            return self.dense_out[0]
        return self.block_channels[self.attention_stage - 1]

    @property
    def query_grid(self):
        r = self.dense_out[1] * 2 ** self.attention_stage
        return (r, r)

    @property
    def key_grid(self):
        q = self.query_grid
        return (q[0] // self.attention_subsample, q[1] // self.attention_subsample)

    @property
    def image_shape(self):
        return (self.out_channels, self.out_resolution, self.out_resolution)

    def validate(self):
        if len(self.dense_out) != 3 or min(self.dense_out) < 1:
            raise ConfigError(f"dense_out must be three positive ints, got {self.dense_out}")
        if self.dense_out[1] != self.dense_out[2]:
            raise ConfigError("dense_out spatial dims must be square")
        if self.d_z < 1 or self.d_1 <= self.d_z:
            raise ConfigError(f"need d_1 > d_z, got d_1={self.d_1}, d_z={self.d_z}")
        if self.n_stages < 1 or min(self.block_channels) < 1:
            raise ConfigError("block_channels must be a nonempty list of positive ints")
        if not 0 <= self.attention_stage <= self.n_stages:
            raise ConfigError(f"attention_stage must lie in [0, {self.n_stages}]")
        f = self.attention_subsample
        if f < 1 or f & (f - 1):
            raise ConfigError(f"attention_subsample must be a power of two, got {f}")
        if self.query_grid[0] % f:
            raise ConfigError("attention_subsample does not divide the attention grid")
        if self.out_resolution != self.dense_out[1] * 2 ** self.n_stages:
            raise ConfigError(
                f"out_resolution {self.out_resolution} != {self.dense_out[1]} * 2^{self.n_stages}")
        if self.out_channels < 1:
            raise ConfigError("out_channels must be positive")

    def to_dict(self):
        d = asdict(self)
        d["dense_out"] = list(self.dense_out)
        d["block_channels"] = list(self.block_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def encode(self):
        return np.array([self.d_z, *self.dense_out, self.n_stages, *self.block_channels,
                         self.attention_stage, self.attention_subsample, self.out_channels,
                         self.out_resolution], dtype=np.float64)

    @classmethod
    def decode(cls, vec):
        v = [int(x) for x in np.asarray(vec).ravel()]
        try:
            n = v[4]
            return cls(d_z=v[0], dense_out=tuple(v[1:4]), block_channels=tuple(v[5:5 + n]),
                       attention_stage=v[5 + n], attention_subsample=v[6 + n],
                       out_channels=v[7 + n], out_resolution=v[8 + n])
        except IndexError:
            raise ConfigError("malformed config tensor") from None


def expected_shapes(config):
    c0 = config.dense_out[0]
    shapes = {"W1": (config.d_1, config.d_z), "b1": (config.d_1,)}
    cin = c0
    for s, cout in enumerate(config.block_channels):
        shapes[f"stage{s}.conv"] = (cout, cin, 3, 3)
        shapes[f"stage{s}.scale"] = (cout,)
        shapes[f"stage{s}.shift"] = (cout,)
        cin = cout
    ca = config.attention_channels
    ck, cv = max(ca // 4, 1), max(ca // 2, 1)
    shapes["attn.phi"] = (ck, ca)
    shapes["attn.psi"] = (ck, ca)
    shapes["attn.value"] = (cv, ca)
    shapes["attn.out"] = (ca, cv)
    shapes["out.conv"] = (config.out_channels, cin, 3, 3)
    shapes["out.scale"] = (config.out_channels,)
    shapes["out.shift"] = (config.out_channels,)
    return shapes


def check_rank(w1):
    rank = np.linalg.matrix_rank(w1)
    if rank != w1.shape[1]:
        raise RankDeficientError(f"W1 has rank {rank}, needs full column rank {w1.shape[1]}")


class _AffineG1:
    """Shared first-layer behaviour for anything with ``w1`` and ``b1``."""

    @cached_property
    def w1t(self):
        return np.ascontiguousarray(self.w1.T)

    @cached_property
    def _gram(self):
        return self.w1.T @ self.w1

    @property
    def d_z(self):
        return self.w1.shape[1]

    @property
    def d_1(self):
        return self.w1.shape[0]

    def g1(self, z):
        return T.add(T.matmul(z, self.w1t), self.b1)

    def project(self, h):
        """Least squares ``z`` for ``h`` and the point ``W1 z + b1``."""
        h = np.asarray(h, dtype=np.float64)
        rhs = (h - self.b1) @ self.w1
        z = np.linalg.solve(self._gram, rhs.T).T
        return z, z @ self.w1t + self.b1


@dataclass(frozen=True, eq=False)
class GeneratorBundle(_AffineG1):
    config: GeneratorConfig
    weights: dict = field(repr=False)

    def __post_init__(self):
        shapes = expected_shapes(self.config)
        missing = set(shapes) - set(self.weights)
        extra = set(self.weights) - set(shapes)
        if missing or extra:
            raise ConfigError(f"weight names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        frozen = {}
        for name, shape in shapes.items():
            arr = np.array(self.weights[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name}: non-finite entries")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "weights", frozen)
        check_rank(frozen["W1"])

    @property
    def w1(self):
        return self.weights["W1"]

    @property
    def b1(self):
        return self.weights["b1"]

    @property
    def image_shape(self):
        return self.config.image_shape

    def g2(self, h, capture_attention=False):
        return g2_forward(h, self, capture_attention)

    def same_as(self, other):
        return (self.config == other.config
                and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights))


def _attention(x, bundle):
    w = bundle.weights
    cfg = bundle.config
    shape = T.value(x).shape
    batch, (c, hh, ww) = shape[:-3], shape[-3:]
    xf = T.reshape(x, batch + (c, hh * ww))
    keys = x
    f = cfg.attention_subsample
    while f > 1:
        keys = T.maxpool_2x(keys)
        f //= 2
    ks = T.value(keys).shape
    kf = T.reshape(keys, batch + (c, ks[-2] * ks[-1]))
    phi = T.matmul(w["attn.phi"], xf)
    psi = T.matmul(w["attn.psi"], kf)
    values = T.matmul(w["attn.value"], kf)
    attn = T.softmax_rows(T.matmul(T.transpose(phi), psi))
    mixed = T.matmul(values, T.transpose(attn))
    out = T.matmul(w["attn.out"], mixed)
    return T.add(x, T.reshape(out, shape)), attn


def g2_forward(h, bundle, capture_attention=False):
    """Render ``h`` (shape ``(..., d_1)``) to an image in [-1, 1].

    Returns ``(image, attention)``; attention is the row-stochastic
    query-by-key matrix when ``capture_attention`` is set, else None.
    """
    cfg = bundle.config
    w = bundle.weights
    hs = T.value(h).shape
    if not hs or hs[-1] != cfg.d_1:
        raise T.ShapeError("g2_forward", f"expected trailing dim {cfg.d_1}, got shape {hs}")
    x = T.reshape(h, hs[:-1] + cfg.dense_out)
    attn = None
    for s in range(cfg.n_stages):
        if s == cfg.attention_stage:
            x, attn = _attention(x, bundle)
        x = T.nearest_upsample_2x(x)
        x = T.conv2d(x, w[f"stage{s}.conv"])
        x = T.affine_channel(x, w[f"stage{s}.scale"], w[f"stage{s}.shift"])
        x = T.relu(x)
    if cfg.attention_stage == cfg.n_stages:
        x, attn = _attention(x, bundle)
    x = T.conv2d(x, w["out.conv"])
    x = T.affine_channel(x, w["out.scale"], w["out.shift"])
    image = T.tanh(x)
    return image, (attn if capture_attention else None)


def g1_forward(z, model):
    zs = T.value(z).shape
    if not zs or zs[-1] != model.d_z:
        raise T.ShapeError("g1_forward", f"expected trailing dim {model.d_z}, got shape {zs}")
    return model.g1(z)


def full_forward(z, model):
    image, _ = model.g2(g1_forward(z, model))
    return image


def project_to_subspace(h, model):
    """``(z_ls, h_proj)``: least-squares preimage of ``h`` under G1 and its image."""
    return model.project(h)


@dataclass(frozen=True, eq=False)
class LinearProbe(_AffineG1):
    """G1 followed by an identity G2: images are the dense codes themselves."""

    w1: np.ndarray
    b1: np.ndarray

    def __post_init__(self):
        w1 = np.array(self.w1, dtype=np.float64)
        b1 = np.array(self.b1, dtype=np.float64)
        if w1.ndim != 2 or b1.shape != (w1.shape[0],):
            raise ConfigError(f"W1 {w1.shape} and b1 {b1.shape} are inconsistent")
        check_rank(w1)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)

    @property
    def image_shape(self):
        return (self.d_1,)

    def g2(self, h, capture_attention=False):
        return h, None


@dataclass(eq=False)
class DenseCode:
    """``h = G1(z) + delta`` with the sum formed once, at construction."""

    z: np.ndarray
    delta: np.ndarray
    h: np.ndarray

    @classmethod
    def build(cls, z, delta, model):
        z = np.array(z, dtype=np.float64)
        delta = np.array(delta, dtype=np.float64)
        return cls(z, delta, g1_forward(z, model) + delta)

    def consistent(self, model):
        return bool(np.array_equal(self.h, g1_forward(self.z, model) + self.delta))


# --------------------------------------------------------------------------

def _stream(seed, *key):
    return _seeds.rng(_seeds.WEIGHTS, seed, *key)


def init_weights(config, seed, max_tries=16):
    """Deterministic Gaussian weights scaled by 1/sqrt(fan_in)."""
    shapes = expected_shapes(config)
    weights = {}
    for idx, (name, shape) in enumerate(sorted(shapes.items())):
        if name == "W1":
            continue
        rng = _stream(seed, idx + 1)
        if name.endswith(".scale"):
            weights[name] = 1.0 + 0.1 * rng.standard_normal(shape)
        elif name.endswith(".shift") or name == "b1":
            weights[name] = 0.1 * rng.standard_normal(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            weights[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
    for attempt in range(max_tries):
        w1 = _stream(seed, 0, attempt).standard_normal(shapes["W1"]) / math.sqrt(config.d_z)
        if np.linalg.matrix_rank(w1) == config.d_z:
            weights["W1"] = w1
            break
    else:
        raise RankDeficientError(f"no full-rank W1 after {max_tries} draws")
    return GeneratorBundle(config, weights)


def save_weights(bundle, path):
    tensors = dict(bundle.weights)
    tensors["config"] = bundle.config.encode()
    weightfile.save(tensors, path)


def bundle_from_tensors(tensors):
    tensors = dict(tensors)
    if "config" not in tensors:
        raise weightfile.WeightFileError("weight file has no 'config' tensor")
    config = GeneratorConfig.decode(tensors.pop("config"))
    return GeneratorBundle(config, tensors)


def load_weights(path):
    return bundle_from_tensors(weightfile.load(path))
