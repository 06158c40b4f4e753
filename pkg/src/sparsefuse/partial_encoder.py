"""Sparse-geometry branch: nearest-neighbour filling, then five partial
convolution stages with mask propagation and valid-count ratio scaling.

``DenseEncoder`` is the pre-interpolation baseline: the same widths and
strides, but ordinary convolutions over a densified depth map.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateInputError
from .sparsifier import SparseDepth, bilinear_densify
from .tensor_core import Conv2d, Module

PAPER_STAGE_CHANNELS = (32, 64, 128, 256, 512)
PAPER_STAGE_STRIDES = (1, 2, 2, 2, 2)
DEFAULT_FILL_RADIUS = 2


class MaskedFeature(NamedTuple):
    features: np.ndarray
    mask: np.ndarray


@dataclass
class SparseEncoderConfig:
    stage_channels: tuple = PAPER_STAGE_CHANNELS
    stage_strides: tuple = PAPER_STAGE_STRIDES
    fill_radius: int = DEFAULT_FILL_RADIUS
    kernel_size: int = 3

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.stage_strides = tuple(int(s) for s in self.stage_strides)
        if len(self.stage_channels) != 5 or len(self.stage_strides) != 5:
            raise ConfigurationError("sparse encoder needs exactly five stages")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigurationError(f"stage channels must strictly increase: {self.stage_channels}")
        if any(s not in (1, 2) for s in self.stage_strides):
            raise ConfigurationError("partial conv strides must be 1 or 2")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel size must be odd")
        if self.fill_radius < 0:
            raise ConfigurationError("fill radius must be non-negative")


def nn_fill(s, radius):
    """Copy each valid depth onto invalid pixels within Chebyshev ``radius``.

    The nearest valid pixel (Euclidean) wins; ties go to the smaller row,
    then the smaller column.  Filled pixels become valid.
    """
    if not s.mask.any():
        raise DegenerateInputError("nothing to fill: mask is empty")
    depth, mask = kernels.nn_fill(s.depth, s.mask, int(radius))
    return SparseDepth(depth, mask)


def _window_count(mask, k, stride):
    ones = np.ones((1, 1, k, k))
    return kernels.conv2d_forward(mask[None].astype(np.float64), ones, np.zeros(1), stride)[0]


def depth_features(depth, mask):
    """Single input channel: log-depth at valid pixels, zero elsewhere."""
    safe = np.where(mask, depth, 1.0)
    return np.where(mask, np.log(safe), 0.0)[None]


class PartialConv2d(Module):
    """Masked convolution renormalised by ``K / S``.

    ``S`` is the number of valid pixels in the window and ``K`` the number of
    in-image pixels (``k*k`` away from borders), so an all-valid mask gives
    exactly the zero-padded ``conv2d`` result.  Sites with ``S == 0`` output
    0 and become invalid.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, rng=None):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, rng=rng)
        self._k_cache = {}

    def _inbounds(self, shape):
        if shape not in self._k_cache:
            self._k_cache[shape] = _window_count(np.ones(shape, dtype=bool), self.conv.kernel_size,
                                                 self.conv.stride)
        return self._k_cache[shape]

    def forward(self, x):
        conv = self.conv
        feats, mask = x
        if feats.shape[0] != conv.in_channels:
            raise ConfigurationError(f"partial conv expects {conv.in_channels} channels, got {feats.shape[0]}")
        m = mask.astype(bool)
        xm = feats * m
        raw = kernels.conv2d_forward(xm, conv.params["weight"], np.zeros(conv.out_channels), conv.stride)
        count = _window_count(m, conv.kernel_size, conv.stride)
        valid = count > 0
        scale = np.where(valid, self._inbounds(m.shape) / np.maximum(count, 1.0), 0.0)
        out = np.where(valid, raw * scale + conv.params["bias"][:, None, None], 0.0)
        self._cache = (xm, m, valid, scale)
        return MaskedFeature(out, valid)

    def backward(self, dy):
        xm, m, valid, scale = self._cache
        conv = self.conv
        dy = np.where(valid, dy, 0.0)
        conv.grads["bias"] += dy.sum(axis=(1, 2))
        dx, dw = kernels.conv2d_backward(xm, conv.params["weight"], dy * scale, conv.stride)
        conv.grads["weight"] += dw
        return dx * m


def partial_conv2d(x, layer):
    return layer.forward(x)


class _EncoderBase(Module):
    def __init__(self, cfg, in_channels=1, rng=None):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels

    def global_feature(self, last):
        feats, mask = last
        n = mask.sum()
        if n == 0:
            raise DegenerateInputError("deepest encoder stage has no valid sites")
        self._gcache = (mask, n)
        return (feats * mask).sum(axis=(1, 2)) / n

    def _relu_stage(self, y):
        feats, mask = y
        on = feats > 0
        self._relu_masks.append(on)
        return MaskedFeature(np.where(on, feats, 0.0), mask)

    def backward(self, d_stages, d_global=None):
        """``d_stages``: gradient per stage output (``None`` allowed)."""
        grads = [None if g is None else g.copy() for g in d_stages]
        if d_global is not None:
            mask, n = self._gcache
            add = d_global[:, None, None] * mask / n
            grads[-1] = add if grads[-1] is None else grads[-1] + add
        upstream = None
        for i in reversed(range(5)):
            g = grads[i]
            if upstream is not None:
                g = upstream if g is None else g + upstream
            if g is None:
                g = np.zeros_like(self._relu_masks[i], dtype=np.float64)
            g = np.where(self._relu_masks[i], g, 0.0)
            upstream = self.stages[i].backward(g)
        return upstream


class SparseEncoder(_EncoderBase):
    """nn_fill, then five ReLU'd partial-conv stages."""

    kind = "partialconv"

    def __init__(self, cfg=None, in_channels=1, rng=None):
        cfg = cfg or SparseEncoderConfig()
        super().__init__(cfg, in_channels, rng)
        rng = rng if rng is not None else np.random.default_rng(0)
        chans = (in_channels,) + cfg.stage_channels
        self.stages = [PartialConv2d(chans[i], chans[i + 1], cfg.kernel_size, cfg.stage_strides[i], rng=rng)
                       for i in range(5)]

    def forward(self, s):
        filled = nn_fill(s, self.cfg.fill_radius)
        x = MaskedFeature(depth_features(filled.depth, filled.mask), filled.mask)
        self._relu_masks = []
        outs = []
        for stage in self.stages:
            x = self._relu_stage(stage.forward(x))
            outs.append(x)
        if not outs[0].mask.any():
            raise DegenerateInputError("all masks empty after the first stage")
        return outs, self.global_feature(outs[-1])


class DenseEncoder(_EncoderBase):
    """Pre-interpolation baseline: densify, then ordinary convolutions."""

    kind = "interpolation"

    def __init__(self, cfg=None, in_channels=1, rng=None):
        cfg = cfg or SparseEncoderConfig()
        super().__init__(cfg, in_channels, rng)
        rng = rng if rng is not None else np.random.default_rng(0)
        chans = (in_channels,) + cfg.stage_channels
        self.stages = [Conv2d(chans[i], chans[i + 1], cfg.kernel_size, cfg.stage_strides[i], rng=rng)
                       for i in range(5)]

    def forward(self, s):
        dense = bilinear_densify(s)
        full = np.ones(dense.shape, dtype=bool)
        x = depth_features(dense, full)
        self._relu_masks = []
        outs = []
        for stage in self.stages:
            y = stage.forward(x)
            ms = self._relu_stage(MaskedFeature(y, np.ones(y.shape[1:], dtype=bool)))
            outs.append(ms)
            x = ms.features
        return outs, self.global_feature(outs[-1])


def encode(s, cfg=None, encoder=None, rng=None):
    """Run the sparse encoder; returns ``(five MaskedFeatures, global feature)``."""
    if encoder is None:
        encoder = SparseEncoder(cfg, rng=rng)
    return encoder.forward(s)
