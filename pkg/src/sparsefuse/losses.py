"""Training objective: log-depth residual reweighted by edge and distance
terms, plus an L1 consistency term at the injected LiDAR pixels."""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .scene_gen import backproject

log = logging.getLogger(__name__)

EDGE_TAU = 0.5
EDGE_ALPHA = 2.0


@dataclass
class LossWeights:
    base: float = 1.0
    consistency: float = 0.005
    edge_alpha: float = EDGE_ALPHA
    edge_tau: float = EDGE_TAU

    def __post_init__(self):
        if min(self.base, self.consistency, self.edge_alpha) < 0 or self.edge_tau <= 0:
            raise ConfigurationError("loss weights must be >= 0 and edge_tau > 0")


def edge_weights(points, valid, alpha=EDGE_ALPHA, tau=EDGE_TAU):
    """``1 + alpha * min(1, D / tau)`` where ``D`` is the largest 3D distance
    to a valid 4-neighbour; 0 at invalid pixels."""
    h, w = valid.shape
    dmax = np.zeros((h, w))
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        v0, v1 = max(0, -dy), min(h, h - dy)
        u0, u1 = max(0, -dx), min(w, w - dx)
        here = points[v0:v1, u0:u1]
        there = points[v0 + dy:v1 + dy, u0 + dx:u1 + dx]
        both = valid[v0:v1, u0:u1] & valid[v0 + dy:v1 + dy, u0 + dx:u1 + dx]
        dist = np.where(both, np.linalg.norm(np.where(both[..., None], here - there, 0.0), axis=-1), 0.0)
        np.maximum(dmax[v0:v1, u0:u1], dist, out=dmax[v0:v1, u0:u1])
    return np.where(valid, 1.0 + alpha * np.minimum(1.0, dmax / tau), 0.0)


def logdist_weights(gt, valid=None):
    """``1 / ln(1 + z)`` at valid pixels, 0 elsewhere."""
    valid = gt > 0 if valid is None else valid
    z = gt[valid]
    if np.any(~np.isfinite(z)) or np.any(z <= 0):
        raise DataError("log-distance weights need positive finite depth at valid pixels")
    out = np.zeros(gt.shape)
    out[valid] = 1.0 / np.log1p(z)
    return out


def consistency_loss_and_grad(pred, sparse):
    if pred.shape != sparse.depth.shape:
        raise ConfigurationError("prediction and sparse depth differ in extent")
    n = int(sparse.mask.sum())
    if n == 0:
        log.warning("consistency loss on an empty mask; returning 0")
        return 0.0, np.zeros(pred.shape)
    diff = np.where(sparse.mask, pred - sparse.depth, 0.0)
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def consistency_loss(pred, sparse):
    return consistency_loss_and_grad(pred, sparse)[0]


def pixel_weights(gt, valid, intrinsics, lw):
    points = backproject(gt, intrinsics)
    return edge_weights(points, valid, lw.edge_alpha, lw.edge_tau) * logdist_weights(gt, valid)


def total_loss_and_grad(pred, gt, sparse, intrinsics=None, lw=None, valid=None, weights=None):
    """Loss value and its gradient with respect to the predicted depth.

    ``weights`` (edge x log-distance) may be passed precomputed; otherwise
    ``intrinsics`` is required to build them.
    """
    lw = lw or LossWeights()
    pred_depth = getattr(pred, "depth", pred)
    if pred_depth.shape != gt.shape:
        raise ConfigurationError("prediction and ground truth differ in extent")
    valid = (gt > 0) if valid is None else valid
    if weights is None:
        if intrinsics is None:
            raise ConfigurationError("intrinsics are needed to compute edge weights")
        weights = pixel_weights(gt, valid, intrinsics, lw)
    n = int(valid.sum())
    grad = np.zeros(gt.shape)
    value = 0.0
    if n:
        safe_gt = np.where(valid, gt, 1.0)
        resid = np.where(valid, np.log(pred_depth) - np.log(safe_gt), 0.0)
        value = lw.base * float((weights * np.abs(resid)).sum() / n)
        grad += lw.base * weights * np.sign(resid) / (n * pred_depth)
    if lw.consistency:
        c, cg = consistency_loss_and_grad(pred_depth, sparse)
        value += lw.consistency * c
        grad += lw.consistency * cg
    return value, grad


def total_loss(pred, gt, sparse, intrinsics=None, lw=None, valid=None, weights=None):
    return total_loss_and_grad(pred, gt, sparse, intrinsics, lw, valid, weights)[0]
