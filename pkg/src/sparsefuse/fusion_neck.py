"""Five-level fusion of sparse-geometry features into the visual pyramid.

Each level computes ``rgb + SE(DWConv(BN(Conv1x1([rgb; depth]))))``.  The
batch norm starts at gamma=0.01, so the residual branch is nearly silent at
initialisation and the network starts out as its monocular counterpart.

Pyramids are lists in stride order (stride 1 first).  The level names L0-L4
run the other way, coarse to fine, so L0 is ``pyramid[4]``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor_core import BatchNorm2d, Conv2d, DWConv2d, Linear, Module, global_avg_pool, sigmoid

SE_REDUCTION = 4
FUSION_GAMMA_INIT = 0.01
# stride order; read backwards these are the L0..L4 widths 384, 256, 128, 64, 32
PAPER_VISUAL_CHANNELS = (32, 64, 128, 256, 384)
PAPER_SPARSE_CHANNELS = (32, 64, 128, 256, 512)


class SEBlock(Module):
    def __init__(self, channels, reduction=SE_REDUCTION, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, self.hidden, rng=rng)
        self.fc2 = Linear(self.hidden, channels, rng=rng)

    def forward(self, x):
        if x.shape[0] != self.channels:
            raise ConfigurationError(f"SE block has {self.channels} channels, input has {x.shape[0]}")
        z = self.fc1.forward(global_avg_pool(x))
        self._on = z > 0
        gate = sigmoid(self.fc2.forward(np.where(self._on, z, 0.0)))
        self._x, self._gate = x, gate
        return x * gate[:, None, None]

    def backward(self, dy):
        x, gate = self._x, self._gate
        dgate = (dy * x).sum(axis=(1, 2))
        dh = self.fc2.backward(dgate * gate * (1.0 - gate))
        dz = self.fc1.backward(np.where(self._on, dh, 0.0))
        n = x.shape[1] * x.shape[2]
        return dy * gate[:, None, None] + dz[:, None, None] / n


def se_forward(x, se):
    return se.forward(x)


class FusionBlock(Module):
    def __init__(self, rgb_channels, depth_channels, rng=None, gamma_init=FUSION_GAMMA_INIT):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.rgb_channels, self.depth_channels = rgb_channels, depth_channels
        self.concat_conv = Conv2d(rgb_channels + depth_channels, rgb_channels, 1, rng=rng)
        self.bn = BatchNorm2d(rgb_channels, gamma_init=gamma_init)
        self.dw = DWConv2d(rgb_channels, 3, rng=rng)
        self.se = SEBlock(rgb_channels, rng=rng)

    def forward(self, rgb, depth):
        if rgb.shape[1:] != depth.shape[1:]:
            raise ConfigurationError(f"fusion extent mismatch: rgb {rgb.shape}, depth {depth.shape}")
        if rgb.shape[0] != self.rgb_channels or depth.shape[0] != self.depth_channels:
            raise ConfigurationError("fusion channel counts do not match the block")
        branch = self.concat_conv.forward(np.concatenate([rgb, depth], axis=0))
        branch = self.bn.forward(branch)
        branch = self.dw.forward(branch)
        branch = self.se.forward(branch)
        return rgb + branch

    def backward(self, dy):
        g = self.se.backward(dy)
        g = self.dw.backward(g)
        g = self.bn.backward(g)
        g = self.concat_conv.backward(g)
        c = self.rgb_channels
        return dy + g[:c], g[c:]


def fuse(rgb, depth, block, training=True):
    """Fuse one level; ``depth`` is a MaskedFeature or a bare feature map."""
    feats = depth.features if hasattr(depth, "features") else depth
    block.train(training)
    return block.forward(rgb, feats)


@dataclass
class NeckConfig:
    visual_channels: tuple = PAPER_VISUAL_CHANNELS
    sparse_channels: tuple = PAPER_SPARSE_CHANNELS

    def __post_init__(self):
        self.visual_channels = tuple(int(c) for c in self.visual_channels)
        self.sparse_channels = tuple(int(c) for c in self.sparse_channels)
        if len(self.visual_channels) != 5 or len(self.sparse_channels) != 5:
            raise ConfigurationError("the neck fuses exactly five levels")

    def level_widths(self):
        """Visual widths in L0..L4 (coarse-to-fine) order."""
        return tuple(reversed(self.visual_channels))


class DepthFusionNeck(Module):
    """Per-level 1x1 adapters where widths differ, then a FusionBlock per level."""

    def __init__(self, cfg=None, rng=None):
        super().__init__()
        cfg = cfg or NeckConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.adapters = []
        self.blocks = []
        for cv, cs in zip(cfg.visual_channels, cfg.sparse_channels):
            self.adapters.append(Conv2d(cs, cv, 1, rng=rng) if cs != cv else None)
            self.blocks.append(FusionBlock(cv, cv, rng=rng))

    def forward(self, visual, sparse):
        if len(visual) != 5 or len(sparse) != 5:
            raise ConfigurationError(f"neck needs five levels, got {len(visual)} visual and {len(sparse)} sparse")
        out = []
        for i in range(5):
            feats = sparse[i].features if hasattr(sparse[i], "features") else sparse[i]
            if self.adapters[i] is not None:
                feats = self.adapters[i].forward(feats)
            out.append(self.blocks[i].forward(visual[i], feats))
        return out

    def backward(self, d_out):
        d_visual, d_sparse = [], []
        for i in range(5):
            dv, ds = self.blocks[i].backward(d_out[i])
            if self.adapters[i] is not None:
                ds = self.adapters[i].backward(ds)
            d_visual.append(dv)
            d_sparse.append(ds)
        return d_visual, d_sparse


def neck_forward(visual, sparse, neck, training=True):
    neck.train(training)
    return neck.forward(visual, sparse)
