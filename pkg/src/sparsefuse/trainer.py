"""Density-agnostic training loop, Adam, and the finite-difference gradient check."""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import DepthModel, ModelConfig
from .errors import ConfigurationError, NumericAbort
from .losses import LossWeights, pixel_weights, total_loss_and_grad
from .sparsifier import RATIO_RANGE, sample_mask, sparsify, uniform_ratio_sampler

log = logging.getLogger(__name__)

_RATIO_STREAM = 0x5A17
_BATCH_STREAM = 1
_MASK_STREAM = 2


@dataclass
class TrainConfig:
    steps: int = 4000
    pretrain_steps: int = 1000
    batch_size: int = 4
    learning_rate: float = 2e-3
    seed: int = 0
    ratio_low: float = RATIO_RANGE[0]
    ratio_high: float = RATIO_RANGE[1]
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not (0 <= self.pretrain_steps <= self.steps):
            raise ConfigurationError("pretrain_steps must lie in [0, steps]")
        if not (0.0 < self.ratio_low <= self.ratio_high <= 1.0):
            raise ConfigurationError("ratio range must sit inside (0, 1]")
        if self.learning_rate < 0:
            raise ConfigurationError("learning rate must be >= 0")


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, model):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        grads = dict(model.named_grads())
        for name, p in model.named_parameters():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainRecord:
    step: int
    ratio: float
    loss: float
    grad_norm: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def losses(self):
        return np.array([r.loss for r in self.records])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(("step", "ratio", "loss", "grad_norm"))
            for r in self.records:
                wr.writerow((r.step, repr(r.ratio), repr(r.loss), repr(r.grad_norm)))


def frame_weights(frame, lw):
    key = ("weights", lw.edge_alpha, lw.edge_tau)
    if key not in frame.cache:
        frame.cache[key] = pixel_weights(frame.gt, frame.valid, frame.intrinsics, lw)
    return frame.cache[key]


def sample_loss(model, frame, sparse, lw):
    """Forward one frame; returns ``(loss, dloss/dpred)``."""
    pred = model.forward(frame.rgb, sparse)
    return total_loss_and_grad(pred.depth, frame.gt, sparse, lw=lw, valid=frame.valid,
                               weights=frame_weights(frame, lw))


def grad_norm(model):
    return float(np.sqrt(sum(float((g * g).sum()) for _, g in model.named_grads())))


class Trainer:
    """Owns the optimizer and the ratio stream; call ``train_step`` in order."""

    def __init__(self, model, frames, cfg=None, lw=None):
        if not frames:
            raise ConfigurationError("training needs at least one frame")
        self.model = model
        self.frames = frames
        self.cfg = cfg or TrainConfig()
        self.lw = lw or LossWeights()
        c = self.cfg
        self.optimizer = Adam(c.learning_rate, c.beta1, c.beta2, c.adam_eps, c.weight_decay)
        self.ratios = uniform_ratio_sampler([c.seed, _RATIO_STREAM], c.ratio_low, c.ratio_high)
        self.log = TrainLog()

    def batch_indices(self, step):
        n = len(self.frames)
        rng = np.random.default_rng([self.cfg.seed, step, _BATCH_STREAM])
        return rng.choice(n, size=min(self.cfg.batch_size, n), replace=False)

    def train_step(self, step):
        cfg, model = self.cfg, self.model
        ratio = next(self.ratios)
        model.fusion_active = model.cfg.fusion and step >= cfg.pretrain_steps
        model.train()
        model.zero_grad()
        idx = self.batch_indices(step)
        total = 0.0
        for i in idx:
            frame = self.frames[i]
            mask = sample_mask(*frame.gt.shape, ratio, [cfg.seed, step, int(i), _MASK_STREAM],
                               allowed=frame.valid)
            sparse = sparsify(frame.gt, mask)
            loss, g = sample_loss(model, frame, sparse, self.lw)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise NumericAbort(f"non-finite loss at step {step} on frame seed {frame.seed}",
                                   dump={"step": step, "frame_seed": frame.seed, "ratio": ratio,
                                         "loss": loss, "valid_pixels": int(sparse.mask.sum())})
            model.backward(g / len(idx))
            total += loss / len(idx)
        gn = grad_norm(model)
        if not np.isfinite(gn):
            raise NumericAbort(f"non-finite gradient at step {step}", dump={"step": step, "ratio": ratio})
        self.optimizer.step(model)
        rec = TrainRecord(step, ratio, total, gn)
        self.log.records.append(rec)
        return rec

    def run(self, progress_every=0):
        t0 = time.perf_counter()
        for step in range(self.cfg.steps):
            rec = self.train_step(step)
            if progress_every and (step % progress_every == 0 or step == self.cfg.steps - 1):
                log.info("step %d ratio %.4f loss %.4f |g| %.3g (%.1fs)", step, rec.ratio, rec.loss,
                         rec.grad_norm, time.perf_counter() - t0)
        self.model.fusion_active = self.model.cfg.fusion
        return self.log


def train(model_cfg, train_cfg, frames, lw=None, progress_every=0):
    model = DepthModel(model_cfg)
    trainer = Trainer(model, frames, train_cfg, lw)
    return model, trainer.run(progress_every)


def train_pair(model_cfg, train_cfg, frames, lw=None, progress_every=0):
    """Train the partial-conv model and the interpolation baseline identically.

    Returns ``{"partialconv": (model, log), "interpolation": (model, log)}``.
    """
    out = {}
    for enc in ("partialconv", "interpolation"):
        cfg = ModelConfig(**{**asdict(model_cfg), "encoder": enc, "fusion": True})
        out[enc] = train(cfg, train_cfg, frames, lw, progress_every)
    return out


# ---------------------------------------------------------------- grad check

GRAD_GROUPS = ("backbone", "encoder", "neck", "decoder", "scale_head")


@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list
    step: float
    skipped: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max(e.rel_error for e in self.entries)

    def groups(self):
        return sorted({e.name.split(".")[0] for e in self.entries})

    def summary(self):
        return (f"{len(self.entries)} parameters checked over {', '.join(self.groups())}; "
                f"max relative error {self.max_rel_error:.3g}; "
                f"{len(self.skipped)} probes skipped for crossing a ReLU/abs kink")


def rel_error(a, n, floor=1e-8):
    return abs(a - n) / max(abs(a), abs(n), floor)


def _kinks(model, pred, frame, sparse):
    """Gate pattern of every non-smooth point the loss passes through."""
    pats = model.gate_pattern()
    pats.append(np.where(frame.valid, pred > frame.gt, False))
    pats.append(np.where(sparse.mask, pred > sparse.depth, False))
    return pats


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(model, frame, ratio=0.05, n_params=250, h=1e-3, seed=0, lw=None, floor=1e-8):
    """Compare analytic and central-difference gradients of the full loss.

    Parameters are sampled evenly across the model's sub-networks.  A probe
    whose +/-h evaluation flips any ReLU or |.| gate straddles a kink, where
    the central difference is not a derivative estimate; such probes are
    recorded in ``skipped`` and another parameter is drawn in their place.
    Batch norm runs in training mode; running statistics are restored.
    """
    lw = lw or LossWeights()
    rng = np.random.default_rng(seed)
    mask = sample_mask(*frame.gt.shape, ratio, [seed, _MASK_STREAM], allowed=frame.valid)
    sparse = sparsify(frame.gt, mask)
    saved = {k: v.copy() for k, v in model.named_buffers()}
    model.train()

    def probe():
        loss, _ = sample_loss(model, frame, sparse, lw)
        return loss, _kinks(model, model._pred.depth, frame, sparse)

    model.zero_grad()
    _, g = sample_loss(model, frame, sparse, lw)
    base = _kinks(model, model._pred.depth, frame, sparse)
    model.backward(g)
    grads = {k: v.copy() for k, v in model.named_grads()}
    params = dict(model.named_parameters())

    groups = [gname for gname in GRAD_GROUPS
              if gname not in ("encoder", "neck") or model.fusion_active]
    per_group = -(-n_params // len(groups))
    entries, skipped = [], []
    for gname in groups:
        names = [k for k in params if k.startswith(gname + ".")]
        sizes = np.array([params[k].size for k in names])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        order = rng.permutation(sizes.sum())
        done = 0
        for flat in order:
            if done == per_group:
                break
            j = int(np.searchsorted(offsets, flat, side="right") - 1)
            name = names[j]
            p = params[name]
            idx = np.unravel_index(int(flat - offsets[j]), p.shape)
            old = p[idx]
            p[idx] = old + h
            up, k_up = probe()
            p[idx] = old - h
            down, k_down = probe()
            p[idx] = old
            numeric = (up - down) / (2 * h)
            analytic = float(grads[name][idx])
            entry = GradCheckEntry(name, tuple(int(i) for i in idx), analytic, numeric,
                                   rel_error(analytic, numeric, floor))
            if _same(base, k_up) and _same(base, k_down):
                entries.append(entry)
                done += 1
            else:
                skipped.append(entry)
    for k, v in model.named_buffers():
        v[...] = saved[k]
    return GradCheckReport(entries, h, skipped)
