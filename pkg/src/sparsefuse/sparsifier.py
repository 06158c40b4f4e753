"""Simulated sparse LiDAR: injection masks, sparse depth, and the dense
pre-interpolation used by the interpolation baseline encoder."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateInputError

RATIO_RANGE = (0.005, 0.30)
DENSIFY_NEIGHBORS = 4
DENSIFY_POWER = 2.0


@dataclass
class SparseDepth:
    """Depth in meters with a boolean validity mask; invalid pixels hold 0.0."""

    depth: np.ndarray
    mask: np.ndarray

    @property
    def shape(self):
        return self.depth.shape

    def valid_count(self):
        return int(self.mask.sum())

    def ratio(self):
        return self.valid_count() / self.mask.size


def mask_count(h, w, ratio):
    """Number of injected pixels, ``round(ratio * h * w)`` with halves rounded up."""
    return int(np.floor(ratio * h * w + 0.5))


def _check_ratio(ratio):
    if not (0.0 < ratio <= 1.0):
        raise ConfigurationError(f"injection ratio must lie in (0, 1], got {ratio}")


def sample_mask(h, w, ratio, seed, allowed=None):
    """Exactly ``round(ratio*h*w)`` uniformly placed valid pixels.

    ``seed`` is anything ``np.random.default_rng`` accepts.  When ``allowed``
    is given, positions outside it are skipped in the same permutation, so
    the draw stays deterministic; if fewer allowed pixels exist than
    requested, all of them are taken.
    """
    _check_ratio(ratio)
    k = mask_count(h, w, ratio)
    if k < 1:
        raise DegenerateInputError(f"ratio {ratio} selects no pixels on a {h}x{w} grid")
    order = np.random.default_rng(seed).permutation(h * w)
    if allowed is not None:
        if allowed.shape != (h, w):
            raise ConfigurationError("allowed-pixel map does not match mask extent")
        order = order[allowed.ravel()[order]]
    mask = np.zeros(h * w, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(h, w)


def sparsify(gt, mask):
    if gt.shape != mask.shape:
        raise ConfigurationError(f"depth {gt.shape} and mask {mask.shape} differ in extent")
    keep = mask.astype(bool) & np.isfinite(gt) & (gt > 0)
    if not keep.any():
        raise DegenerateInputError("no valid LiDAR pixels remain after masking")
    return SparseDepth(np.where(keep, gt, 0.0), keep)


def bilinear_densify(s, neighbors=DENSIFY_NEIGHBORS, power=DENSIFY_POWER):
    """Dense pre-interpolation: inverse-distance weighting over the nearest
    ``neighbors`` valid pixels (ties in row-major order), exact at valid pixels."""
    if s.valid_count() < 3:
        raise DegenerateInputError("densification needs at least 3 valid pixels")
    return kernels.idw_densify(s.depth, s.mask, neighbors, power)


def uniform_ratio_sampler(seed, low=RATIO_RANGE[0], high=RATIO_RANGE[1]):
    """Endless i.i.d. uniform injection ratios on ``[low, high]``."""
    if not (0.0 < low <= high <= 1.0):
        raise ConfigurationError(f"ratio range [{low}, {high}] is not inside (0, 1]")
    rng = np.random.default_rng(seed)
    while True:
        yield float(rng.uniform(low, high))
