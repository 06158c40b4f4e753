"""Toy visual branch, depth decoder, global scale head and the end-to-end model.

The visual branch is a small conv pyramid standing in for a pretrained
transformer; the global average of its deepest level plays the role of the
CLS token.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fusion_neck import PAPER_SPARSE_CHANNELS, PAPER_VISUAL_CHANNELS, DepthFusionNeck, NeckConfig
from .partial_encoder import DenseEncoder, SparseEncoder, SparseEncoderConfig, PAPER_STAGE_STRIDES
from .tensor_core import Conv2d, Linear, Module, ReLU, Upsample2x, global_avg_pool

ENCODERS = ("partialconv", "interpolation")


def scaled_widths(widths, multiplier):
    return tuple(max(1, int(round(multiplier * c))) for c in widths)


@dataclass
class ModelConfig:
    width_multiplier: float = 0.125
    encoder: str = "partialconv"
    fusion: bool = True
    fill_radius: int = 2
    kernel_size: int = 3
    scale_hidden: int = 32
    depth_bias_init: float = 3.0
    init_seed: int = 0

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ConfigurationError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.width_multiplier <= 0:
            raise ConfigurationError("width multiplier must be positive")

    @property
    def visual_channels(self):
        return scaled_widths(PAPER_VISUAL_CHANNELS, self.width_multiplier)

    @property
    def sparse_channels(self):
        return scaled_widths(PAPER_SPARSE_CHANNELS, self.width_multiplier)

    def encoder_config(self):
        return SparseEncoderConfig(self.sparse_channels, PAPER_STAGE_STRIDES, self.fill_radius, self.kernel_size)

    def neck_config(self):
        return NeckConfig(self.visual_channels, self.sparse_channels)

    def to_dict(self):
        return asdict(self)


@dataclass
class DepthPrediction:
    depth: np.ndarray
    scale: float
    relative: np.ndarray = field(repr=False)


class VisualBackbone(Module):
    """Five stages of (strided conv, ReLU, conv, ReLU) at strides 1, 2, 2, 2, 2."""

    def __init__(self, channels, kernel_size=3, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = tuple(channels)
        chans = (3,) + self.channels
        self.convs = []
        self.relus = []
        for i, stride in enumerate(PAPER_STAGE_STRIDES):
            self.convs.append(Conv2d(chans[i], chans[i + 1], kernel_size, stride, rng=rng))
            self.convs.append(Conv2d(chans[i + 1], chans[i + 1], kernel_size, 1, rng=rng))
            self.relus += [ReLU(), ReLU()]

    def forward(self, rgb):
        if rgb.ndim != 3 or rgb.shape[0] != 3:
            raise ConfigurationError(f"expected a 3-channel image, got shape {rgb.shape}")
        if rgb.shape[1] % 16 or rgb.shape[2] % 16:
            raise ConfigurationError(f"image extent {rgb.shape[1:]} is not divisible by 16")
        x = rgb
        pyramid = []
        for i in range(5):
            x = self.relus[2 * i].forward(self.convs[2 * i].forward(x))
            x = self.relus[2 * i + 1].forward(self.convs[2 * i + 1].forward(x))
            pyramid.append(x)
        self._deep_shape = x.shape
        return pyramid, global_avg_pool(x)

    def backward(self, d_pyramid, d_token=None):
        c, h, w = self._deep_shape
        g = np.zeros(self._deep_shape) if d_pyramid[4] is None else d_pyramid[4].copy()
        if d_token is not None:
            g += d_token[:, None, None] / (h * w)
        for i in reversed(range(5)):
            if i < 4 and d_pyramid[i] is not None:
                g = g + d_pyramid[i]
            g = self.convs[2 * i + 1].backward(self.relus[2 * i + 1].backward(g))
            g = self.convs[2 * i].backward(self.relus[2 * i].backward(g))
        return g


def visual_forward(rgb, backbone):
    return backbone.forward(rgb)


class DepthDecoder(Module):
    """Coarse-to-fine: upsample, conv+ReLU, add the skip; exp of a final conv."""

    def __init__(self, channels, kernel_size=3, depth_bias_init=0.0, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = tuple(channels)
        self.ups = [Upsample2x() for _ in range(4)]
        self.convs = [Conv2d(self.channels[i + 1], self.channels[i], kernel_size, rng=rng) for i in range(4)]
        self.relus = [ReLU() for _ in range(4)]
        self.head = Conv2d(self.channels[0], 1, kernel_size, rng=rng)
        self.head.params["bias"][:] = depth_bias_init

    def forward(self, pyramid):
        d = pyramid[4]
        for i in reversed(range(4)):
            u = self.ups[i].forward(d, pyramid[i].shape[1:])
            d = self.relus[i].forward(self.convs[i].forward(u)) + pyramid[i]
        self._rel = np.exp(self.head.forward(d)[0])
        return self._rel

    def backward(self, d_rel):
        g = self.head.backward((d_rel * self._rel)[None])
        d_pyr = [None] * 5
        for i in range(4):
            d_pyr[i] = g
            g = self.ups[i].backward(self.convs[i].backward(self.relus[i].backward(g)))
        d_pyr[4] = g
        return d_pyr


def decode(pyramid, decoder):
    return decoder.forward(pyramid)


class ScaleHead(Module):
    """Two-layer MLP on [visual token; sparse global]; the output is exp'd."""

    def __init__(self, token_width, sparse_width, hidden=32, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.token_width, self.sparse_width = token_width, sparse_width
        self.fc1 = Linear(token_width + sparse_width, hidden, rng=rng)
        # sparse columns start at zero so switching fusion on leaves the scale unchanged
        self.fc1.params["weight"][:, token_width:] = 0.0
        self.relu = ReLU()
        self.fc2 = Linear(hidden, 1, rng=rng, zero_init=True)

    def forward(self, token, sparse_global):
        if token.shape != (self.token_width,) or sparse_global.shape != (self.sparse_width,):
            raise ConfigurationError(
                f"scale head expects widths ({self.token_width}, {self.sparse_width}), "
                f"got ({token.shape}, {sparse_global.shape})")
        h = self.relu.forward(self.fc1.forward(np.concatenate([token, sparse_global])))
        self._scale = float(np.exp(self.fc2.forward(h)[0]))
        return self._scale

    def backward(self, d_scale):
        g = self.fc2.backward(np.array([d_scale * self._scale]))
        g = self.fc1.backward(self.relu.backward(g))
        return g[:self.token_width], g[self.token_width:]


def predict_scale(token, sparse_global, head):
    return head.forward(token, sparse_global)


class DepthModel(Module):
    """Visual pyramid, sparse encoder, fusion neck, decoder and scale head.

    With ``fusion_active`` off the sparse branch is skipped entirely and the
    scale head sees zeros in place of the sparse global feature: that is the
    monocular reduction used as the baseline.
    """

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        vis, sp = cfg.visual_channels, cfg.sparse_channels
        self.backbone = VisualBackbone(vis, cfg.kernel_size, rng=rng)
        self.decoder = DepthDecoder(vis, cfg.kernel_size, cfg.depth_bias_init, rng=rng)
        self.scale_head = ScaleHead(vis[-1], sp[-1], cfg.scale_hidden, rng=rng)
        enc_cls = SparseEncoder if cfg.encoder == "partialconv" else DenseEncoder
        self.encoder = enc_cls(cfg.encoder_config(), rng=rng)
        self.neck = DepthFusionNeck(cfg.neck_config(), rng=rng)
        self.fusion_active = cfg.fusion

    @property
    def label(self):
        if not self.cfg.fusion:
            return "monocular"
        return self.cfg.encoder

    def forward(self, rgb, sparse):
        pyramid, token = self.backbone.forward(rgb)
        self._active = self.fusion_active
        if self._active:
            stages, sparse_global = self.encoder.forward(sparse)
            fused = self.neck.forward(pyramid, stages)
        else:
            sparse_global = np.zeros(self.scale_head.sparse_width)
            fused = pyramid
        rel = self.decoder.forward(fused)
        scale = self.scale_head.forward(token, sparse_global)
        self._pred = DepthPrediction(scale * rel, scale, rel)
        return self._pred

    def backward(self, d_depth):
        pred = self._pred
        d_rel = d_depth * pred.scale
        d_scale = float((d_depth * pred.relative).sum())
        d_token, d_global = self.scale_head.backward(d_scale)
        d_fused = self.decoder.backward(d_rel)
        if self._active:
            d_pyramid, d_sparse = self.neck.backward(d_fused)
            self.encoder.backward(d_sparse, d_global)
        else:
            d_pyramid = d_fused
        self.backbone.backward(d_pyramid, d_token)

    def predict(self, rgb, sparse):
        was = self.training
        self.eval()
        try:
            return self.forward(rgb, sparse).depth
        finally:
            self.train(was)


def full_forward(rgb, sparse, model):
    return model.forward(rgb, sparse)
