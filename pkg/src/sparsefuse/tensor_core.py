"""Differentiable building blocks on single ``(C, H, W)`` float64 feature maps.

Layers cache what they need during ``forward`` and return the input gradient
from ``backward`` while accumulating parameter gradients into ``grads``.
A layer instance therefore handles one sample at a time: forward, then
backward, then the next sample.
"""
import numpy as np

from . import kernels
from .errors import ConfigurationError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_map(x, name="x"):
    if x.ndim != 3:
        raise ConfigurationError(f"{name} must be (C, H, W), got shape {x.shape}")


def conv2d(x, weight, bias, stride=1):
    """Dense convolution with zero same-padding."""
    _check_map(x)
    if weight.shape[1] != x.shape[0]:
        raise ConfigurationError(f"conv expects {weight.shape[1]} input channels, got {x.shape[0]}")
    if weight.shape[2] % 2 == 0:
        raise ConfigurationError("kernel size must be odd")
    return kernels.conv2d_forward(x, weight, bias, stride)


def dwconv2d(x, weight, stride=1):
    _check_map(x)
    if weight.shape[0] != x.shape[0] or weight.shape[1] != 1:
        raise ConfigurationError(f"depthwise weight {weight.shape} does not match {x.shape[0]} channels")
    return kernels.dwconv2d_forward(x, weight, stride)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalization; training mode updates the running stats in place.

    Returns ``(y, xhat, inv_std)``.
    """
    _check_map(x)
    c, h, w = x.shape
    if h * w == 0:
        raise ConfigurationError("batch norm over an empty spatial extent")
    if gamma.shape[0] != c:
        raise ConfigurationError(f"batch norm has {gamma.shape[0]} channels, input has {c}")
    if training:
        mean = x.mean(axis=(1, 2))
        var = x.var(axis=(1, 2))
        n = h * w
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    return gamma[:, None, None] * xhat + beta[:, None, None], xhat, inv_std


def global_avg_pool(x):
    _check_map(x)
    return x.mean(axis=(1, 2))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Module:
    """Minimal parameter container with recursive naming."""

    training = True

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def gate_pattern(self):
        """Boolean on/off state of every piecewise-linear gate from the last forward."""
        out = []
        for m in self.modules():
            if getattr(m, "_on", None) is not None:
                out.append(m._on.copy())
            out.extend(np.copy(g) for g in getattr(m, "_relu_masks", ()))
        return out

    def named_parameters(self, prefix=""):
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix=""):
        for k in self.params:
            yield prefix + k, self.grads[k]
        for name, child in self.children():
            yield from child.named_grads(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for k, v in self.buffers.items():
            yield prefix + k, v
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)
        for _, child in self.children():
            child.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self):
        return sum(v.size for _, v in self.named_parameters())


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, rng=None, bias=True):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigurationError("kernel size must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride = kernel_size, stride
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.use_bias = bias
        if bias:
            self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    @property
    def bias(self):
        return self.params["bias"] if self.use_bias else np.zeros(self.out_channels)

    def forward(self, x):
        self._x = x
        return conv2d(x, self.params["weight"], self.bias, self.stride)

    def backward(self, dy):
        dx, dw = kernels.conv2d_backward(self._x, self.params["weight"], dy, self.stride)
        self.grads["weight"] += dw
        if self.use_bias:
            self.grads["bias"] += dy.sum(axis=(1, 2))
        return dx


class DWConv2d(Module):
    """Depthwise 3x3 (by default) convolution, no bias."""

    def __init__(self, channels, kernel_size=3, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.kernel_size = channels, kernel_size
        self.params["weight"] = he_normal(rng, (channels, 1, kernel_size, kernel_size), kernel_size * kernel_size)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return dwconv2d(x, self.params["weight"])

    def backward(self, dy):
        dx, dw = kernels.dwconv2d_backward(self._x, self.params["weight"], dy, 1)
        self.grads["weight"] += dw
        return dx


class BatchNorm2d(Module):
    def __init__(self, channels, gamma_init=1.0, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.full(channels, float(gamma_init))
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def forward(self, x):
        y, self._xhat, self._inv_std = batchnorm2d(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            self.training, self.momentum, self.eps)
        self._batch_stats = self.training
        return y

    def backward(self, dy):
        xhat, inv_std = self._xhat, self._inv_std
        gamma = self.params["gamma"]
        self.grads["gamma"] += (dy * xhat).sum(axis=(1, 2))
        self.grads["beta"] += dy.sum(axis=(1, 2))
        dxhat = dy * gamma[:, None, None]
        if not self._batch_stats:
            return dxhat * inv_std[:, None, None]
        n = xhat.shape[1] * xhat.shape[2]
        s1 = dxhat.sum(axis=(1, 2))[:, None, None]
        s2 = (dxhat * xhat).sum(axis=(1, 2))[:, None, None]
        return (inv_std[:, None, None] / n) * (n * dxhat - s1 - xhat * s2)


class ReLU(Module):
    def forward(self, x):
        self._on = x > 0
        return np.where(self._on, x, 0.0)

    def backward(self, dy):
        return np.where(self._on, dy, 0.0)


class Linear(Module):
    """Dense layer on vectors: ``y = W x + b`` with ``W`` of shape (out, in)."""

    def __init__(self, in_features, out_features, rng=None, zero_init=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        if zero_init:
            self.params["weight"] = np.zeros((out_features, in_features))
        else:
            self.params["weight"] = he_normal(rng, (out_features, in_features), in_features)
        self.params["bias"] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x):
        if x.shape != (self.in_features,):
            raise ConfigurationError(f"linear expects width {self.in_features}, got {x.shape}")
        self._x = x
        return self.params["weight"] @ x + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] += np.outer(dy, self._x)
        self.grads["bias"] += dy
        return self.params["weight"].T @ dy


class Upsample2x(Module):
    """Nearest-neighbour upsampling, cropped to a target extent."""

    def forward(self, x, size):
        self._in_shape = x.shape
        h, w = size
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)[:, :h, :w]

    def backward(self, dy):
        c, h, w = self._in_shape
        pad = np.zeros((c, 2 * h, 2 * w))
        pad[:, :dy.shape[1], :dy.shape[2]] = dy
        return pad.reshape(c, h, 2, w, 2).sum(axis=(2, 4))
