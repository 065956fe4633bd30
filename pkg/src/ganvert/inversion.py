"""Two-step inversion of the split generator.

Step one fits a latent code: ``min_z L(x, G2(G1(z))) + lambda1 ||z||^2``
with Adam from several seeded starts.  Step two holds ``z*`` fixed and fits
a displacement in the dense layer: ``min_d L(x, G2(G1(z*) + d)) +
lambda2 ||d||_1`` by Adam on the smooth part followed by soft-thresholding.

Both steps return their best iterate, so trajectories are best-so-far
objective values and never increase.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from . import _seeds, tensor as T
from .generator import DenseCode, g1_forward
from .loss import (LossConfig, FeatureExtractor, loss_mse_feat, latent_prior_penalty,
                   l1_penalty, soft_threshold)


class InversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class InversionConfig:
    steps_z: int = 400
    steps_delta: int = 800
    lr_z: float = 0.05
    lr_delta: float = 0.01
    restarts: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # an iterate sequence stops once its best objective has improved by less
    # than plateau_tol (relative) over the last `patience` iterations
    patience: int = 100
    plateau_tol: float = 1e-9
    lr_decay: float = 1.0
    seed: int = 0
    extractor: str = "randconv"
    extractor_seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.steps_z < 1 or self.steps_delta < 1:
            raise ValueError("step budgets must be >= 1")
        if self.lr_z <= 0 or self.lr_delta <= 0:
            raise ValueError("learning rates must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    def replace(self, **changes):
        d = asdict(self)
        loss_changes = {k: changes.pop(k) for k in list(changes) if k in ("lambda_feat", "lambda1", "lambda2")}
        d.update(changes)
        d["loss"] = {**d["loss"], **loss_changes}
        return InversionConfig(**d)

    def to_dict(self):
        return asdict(self)

    def make_extractor(self, image_shape):
        if self.extractor == "pixel" or self.loss.lambda_feat == 0:
            return FeatureExtractor("pixel")
        return FeatureExtractor(self.extractor, self.extractor_seed, in_channels=image_shape[0])


class Adam:
    """Elementwise Adam state over an array of parameters."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8, decay=1.0):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape[:1] if len(shape) > 1 else (), dtype=np.int64)
        self.lr, self.b1, self.b2, self.eps, self.decay = lr, beta1, beta2, eps, decay

    def direction(self, grad, rows=None):
        """Update moments with ``grad`` and return ``(step, lr / (sqrt(v_hat) + eps))``.

        ``rows`` restricts the update to a subset of the leading axis.
        """
        sel = Ellipsis if rows is None else rows
        m = self.m[sel] = self.b1 * self.m[sel] + (1 - self.b1) * grad
        v = self.v[sel] = self.b2 * self.v[sel] + (1 - self.b2) * grad * grad
        self.t[sel] += 1
        t = self.t[sel]
        if np.ndim(t):
            t = t[:, None]
        lr = self.lr * self.decay ** (t - 1)
        m_hat = m / (1 - self.b1 ** t)
        v_hat = v / (1 - self.b2 ** t)
        scale = lr / (np.sqrt(v_hat) + self.eps)
        return scale * m_hat, scale


class _Plateau:
    def __init__(self, n, patience, tol):
        self.hist = [[] for _ in range(n)]
        self.patience, self.tol = patience, tol

    def stalled(self, i, best):
        h = self.hist[i]
        h.append(best)
        if len(h) <= self.patience:
            return False
        old = h[-1 - self.patience]
        return old - best <= self.tol * abs(best)


@dataclass
class LatentFit:
    z: np.ndarray
    trajectory: list
    objective: float
    restart_index: int
    restart_objectives: list


@dataclass
class DenseFit:
    delta: np.ndarray
    trajectory: list
    objective: float
    error: float
    error_start: float


@dataclass
class InversionResult:
    code: DenseCode
    trajectory_z: list
    trajectory_delta: list
    error_latent: float
    error_dense: float
    restart_index: int
    config: InversionConfig
    stage: str = "dense"

    def to_json_dict(self):
        return {
            "stage": self.stage,
            "config": self.config.to_dict(),
            "error_latent": self.error_latent,
            "error_dense": self.error_dense,
            "restart_index": self.restart_index,
            "z": self.code.z.tolist(),
            "delta": self.code.delta.tolist(),
            "trajectory_z": list(self.trajectory_z),
            "trajectory_delta": list(self.trajectory_delta),
        }

    @classmethod
    def from_json_dict(cls, d, model):
        config = InversionConfig(**d["config"])
        code = DenseCode.build(np.array(d["z"]), np.array(d["delta"]), model)
        return cls(code, d["trajectory_z"], d["trajectory_delta"], d["error_latent"],
                   d["error_dense"], d["restart_index"], config, d.get("stage", "dense"))


def _check_target(target, model):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != tuple(model.image_shape):
        raise T.ShapeError("inversion", f"target shape {target.shape} != generator output {tuple(model.image_shape)}")
    if not np.all(np.isfinite(target)):
        raise ValueError("target has non-finite entries")
    return target


def restart_inits(config, d_z):
    return np.stack([_seeds.rng(_seeds.RESTART, config.seed, k).standard_normal(d_z)
                     for k in range(config.restarts)])


def invert_latent(target, model, config=None, z_init=None):
    """Best latent code over ``config.restarts`` seeded Adam runs."""
    config = config or InversionConfig()
    target = _check_target(target, model)
    lam = config.loss
    ext = config.make_extractor(target.shape)
    tfeat = ext(target) if lam.lambda_feat else None
    z = restart_inits(config, model.d_z) if z_init is None else np.atleast_2d(np.array(z_init, dtype=np.float64))
    n = z.shape[0]
    opt = Adam(z.shape, config.lr_z, config.beta1, config.beta2, config.eps, config.lr_decay)
    best = np.full(n, np.inf)
    best_z = z.copy()
    traj = [[] for _ in range(n)]
    failed = np.zeros(n, dtype=bool)
    running = np.ones(n, dtype=bool)
    plateau = _Plateau(n, config.patience, config.plateau_tol)
    for _ in range(config.steps_z):
        rows = np.flatnonzero(running)
        if rows.size == 0:
            break
        g = T.Graph()
        zn = g.leaf(z[rows])
        image, _ = model.g2(model.g1(zn))
        rec = loss_mse_feat(target, image, ext, lam.lambda_feat, batch=True, target_features=tfeat)
        obj = T.add(rec, T.scale(latent_prior_penalty(zn, batch=True), lam.lambda1))
        T.reduce_sum(obj)
        vals = obj.value
        (grad,) = T.backward(g, 1.0, [zn])
        ok = np.isfinite(vals) & np.all(np.isfinite(grad), axis=1)
        for k, r in enumerate(rows):
            if not ok[k]:
                failed[r] = True
                running[r] = False
                continue
            if vals[k] < best[r]:
                best[r] = vals[k]
                best_z[r] = z[r]
            traj[r].append(float(best[r]))
            if plateau.stalled(r, best[r]):
                running[r] = False
        live = rows[ok]
        if live.size:
            step, _ = opt.direction(grad[ok], live)
            z[live] = z[live] - step
    if not np.any(np.isfinite(best)):
        raise InversionError("every restart diverged (non-finite loss)")
    pick = int(np.argmin(best))
    return LatentFit(best_z[pick].copy(), traj[pick], float(best[pick]), pick, best.tolist())


def invert_dense(target, model, z_star, config=None, lambda2=None):
    """Sparse displacement in the dense layer around ``G1(z_star)``.

    Each iteration takes an Adam step on the reconstruction loss and then
    applies the L1 proximal map in Adam's diagonal metric, i.e.
    soft-thresholding at ``lr * lambda2 / (sqrt(v_hat) + eps)``.  Its fixed
    points are exactly the minimizers of the composite objective.
    """
    config = config or InversionConfig()
    target = _check_target(target, model)
    lam = config.loss
    lam2 = lam.lambda2 if lambda2 is None else float(lambda2)
    ext = config.make_extractor(target.shape)
    tfeat = ext(target) if lam.lambda_feat else None
    h0 = g1_forward(np.asarray(z_star, dtype=np.float64), model)
    delta = np.zeros_like(h0)
    opt = Adam(delta.shape, config.lr_delta, config.beta1, config.beta2, config.eps, config.lr_decay)
    best, best_err, best_delta = np.inf, np.inf, delta.copy()
    start_err = None
    traj = []
    plateau = _Plateau(1, config.patience, config.plateau_tol)
    for _ in range(config.steps_delta):
        g = T.Graph()
        dn = g.leaf(delta)
        image, _ = model.g2(T.add(h0, dn))
        rec = loss_mse_feat(target, image, ext, lam.lambda_feat, target_features=tfeat)
        err = float(rec.value)
        total = err + lam2 * l1_penalty(delta)
        if start_err is None:
            start_err = err
        (grad,) = T.backward(g, 1.0, [dn])
        if not (math.isfinite(total) and np.all(np.isfinite(grad))):
            break
        if total < best:
            best, best_err, best_delta = total, err, delta.copy()
        traj.append(best)
        if plateau.stalled(0, best):
            break
        step, scale = opt.direction(grad)
        delta = soft_threshold(delta - step, scale * lam2)
    if not math.isfinite(best):
        raise InversionError("dense step diverged (non-finite loss)")
    return DenseFit(best_delta, traj, best, best_err, start_err)


def invert_two_step(target, model, config=None):
    config = config or InversionConfig()
    latent = invert_latent(target, model, config)
    dense = invert_dense(target, model, latent.z, config)
    code = DenseCode.build(latent.z, dense.delta, model)
    return InversionResult(code, latent.trajectory, dense.trajectory, dense.error_start,
                           dense.error, latent.restart_index, config, "dense")


def latent_only(target, model, config=None):
    """Stage one alone, packaged as a result with a zero displacement."""
    config = config or InversionConfig()
    latent = invert_latent(target, model, config)
    code = DenseCode.build(latent.z, np.zeros(model.d_1), model)
    err = reconstruction_error(target, model, code.h, config)
    return InversionResult(code, latent.trajectory, [], err, err, latent.restart_index, config, "latent")


def random_start(config, d_z):
    return _seeds.rng(_seeds.RANDOM_START, config.seed).standard_normal(d_z)


def invert_dense_unregularized(target, model, config=None):
    """Fit ``h`` over the whole dense layer from ``G1(z_rand)`` with no penalty."""
    config = config or InversionConfig()
    z0 = random_start(config, model.d_z)
    dense = invert_dense(target, model, z0, config, lambda2=0.0)
    code = DenseCode.build(z0, dense.delta, model)
    return InversionResult(code, [], dense.trajectory, dense.error_start, dense.error, -1,
                           config, "dense-unreg")


def reconstruction_error(target, model, h, config=None):
    """L_mse-feat of ``G2(h)`` against ``target``."""
    config = config or InversionConfig()
    target = _check_target(target, model)
    ext = config.make_extractor(target.shape)
    image, _ = model.g2(np.asarray(h, dtype=np.float64))
    return float(loss_mse_feat(target, image, ext, config.loss.lambda_feat))
