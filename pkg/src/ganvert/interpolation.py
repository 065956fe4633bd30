"""Linear paths through the latent space and the dense layer.

Frame ``k`` of ``steps`` uses ``alpha = k / (steps - 1)`` and the convex
combination ``alpha * first + (1 - alpha) * second``, so frame 0 renders
the second endpoint.  It is evaluated as ``second + alpha * (first -
second)``, which is exact when the endpoints coincide.  Delta mode walks ``G1(z*) + alpha * delta*``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import g1_forward, project_to_subspace
from ._parallel import map_ordered

MODES = ("latent", "dense", "delta")


@dataclass(frozen=True, eq=False)
class InterpolationSpec:
    mode: str
    first: np.ndarray
    second: np.ndarray = None
    steps: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.second is None:
            raise ValueError(f"{self.mode} mode needs two endpoints")

    def alphas(self):
        return [k / (self.steps - 1) for k in range(self.steps)]


def latent_spec(z1, z2, steps):
    return InterpolationSpec("latent", np.asarray(z1, float), np.asarray(z2, float), steps)


def dense_spec(h1, h2, steps):
    return InterpolationSpec("dense", np.asarray(h1, float), np.asarray(h2, float), steps)


def delta_spec(z_star, delta_star, steps):
    return InterpolationSpec("delta", np.asarray(z_star, float), np.asarray(delta_star, float), steps)


def _check(spec, bundle):
    if spec.mode == "delta":
        ok = spec.first.shape == (bundle.d_z,) and spec.second.shape == (bundle.d_1,)
    else:
        want = (bundle.d_z,) if spec.mode == "latent" else (bundle.d_1,)
        ok = spec.first.shape == want and spec.second.shape == want
    if not ok:
        raise ValueError(f"{spec.mode} endpoints have shapes {spec.first.shape}, {spec.second.shape}")


def frame_code(spec, alpha, bundle):
    """Dense code (or latent code in latent mode) rendered at ``alpha``."""
    if spec.mode == "delta":
        h0 = g1_forward(spec.first, bundle)
        if alpha == 0:
            return h0
        if alpha == 1:
            return h0 + spec.second
        return h0 + alpha * spec.second
    if alpha == 0:
        return spec.second
    if alpha == 1:
        return spec.first
    return spec.second + alpha * (spec.first - spec.second)


def dense_codes(spec, bundle):
    codes = [frame_code(spec, a, bundle) for a in spec.alphas()]
    if spec.mode == "latent":
        codes = [g1_forward(z, bundle) for z in codes]
    return codes


def _render(code, bundle, latent):
    h = g1_forward(code, bundle) if latent else code
    image, _ = bundle.g2(h)
    return image


def interpolate(spec, bundle):
    """Ordered list of rendered frames."""
    _check(spec, bundle)
    latent = spec.mode == "latent"
    codes = [frame_code(spec, a, bundle) for a in spec.alphas()]
    return map_ordered(lambda c: _render(c, bundle, latent), codes)


def off_subspace_certificate(h_frames, bundle):
    """Distance of each dense code from the latent-reachable subspace G1(Z)."""
    out = []
    for h in h_frames:
        _, proj = project_to_subspace(h, bundle)
        out.append(float(np.linalg.norm(np.asarray(h) - proj)))
    return out
