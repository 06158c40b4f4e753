"""Distance-stratified depth metrics and their CSV tables.

Pixels are pooled across frames before any metric is formed, so the
Overall row is exactly the pooled metric over the union of the three bins.
Bins are half-open ``[1, 50)``, ``[50, 100)`` and closed ``[100, 150]``;
pixels with ground truth outside ``[1, 150]`` are ignored everywhere.
An empty pixel set yields ``None``, written as ``-`` in CSV.
"""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .sparsifier import sample_mask, sparsify

BIN_EDGES = (1.0, 50.0, 100.0, 150.0)
RANGE_LABELS = ("1-50", "50-100", "100-150")
OVERALL = "overall"
ABLATION_RATIOS = (0.005, 0.008, 0.010, 0.015, 0.020, 0.030)
HEADLINE_RATIO = 0.005
DELTA_THRESHOLD = 1.25
ABSENT = "-"

STRATIFIED_COLUMNS = ("range", "model", "absrel", "rmse", "delta1", "pixel_count")
ABLATION_COLUMNS = ("ratio", "encoder", "absrel", "rmse")
CURVE_COLUMNS = ("bin_midpoint", "model", "absrel")


def absrel(pred, gt, sel):
    if not sel.any():
        return None
    p, g = pred[sel], gt[sel]
    return float(np.mean(np.abs(p - g) / g))


def rmse(pred, gt, sel):
    if not sel.any():
        return None
    d = pred[sel] - gt[sel]
    return float(np.sqrt(np.mean(d * d)))


def delta1(pred, gt, sel):
    if not sel.any():
        return None
    p, g = pred[sel], gt[sel]
    return float(np.mean(np.maximum(p / g, g / p) < DELTA_THRESHOLD))


def bin_masks(gt, valid=None):
    """Boolean selections for the three bins, in order."""
    ok = np.isfinite(gt) & (gt > 0) if valid is None else valid
    out = []
    for i, (lo, hi) in enumerate(zip(BIN_EDGES, BIN_EDGES[1:])):
        top = gt <= hi if i == len(RANGE_LABELS) - 1 else gt < hi
        out.append(ok & (gt >= lo) & top)
    return out


class _Pool:
    """Running sums for one (range, model) cell."""

    def __init__(self):
        self.n = 0
        self.abs_rel = 0.0
        self.sq = 0.0
        self.good = 0

    def add(self, pred, gt, sel):
        p, g = pred[sel], gt[sel]
        self.n += p.size
        self.abs_rel += float(np.sum(np.abs(p - g) / g))
        self.sq += float(np.sum((p - g) ** 2))
        self.good += int(np.sum(np.maximum(p / g, g / p) < DELTA_THRESHOLD))

    def merge(self, other):
        self.n += other.n
        self.abs_rel += other.abs_rel
        self.sq += other.sq
        self.good += other.good

    def metrics(self):
        if self.n == 0:
            return None, None, None
        return self.abs_rel / self.n, float(np.sqrt(self.sq / self.n)), self.good / self.n


@dataclass
class MetricRow:
    range: str
    model: str
    absrel: float = None
    rmse: float = None
    delta1: float = None
    pixel_count: int = 0


def _fmt(x):
    return ABSENT if x is None else repr(float(x))


def _parse(x):
    return None if x == ABSENT else float(x)


class MetricTable:
    """Rows keyed by (range label, model label), Table-1 shaped."""

    def __init__(self, rows=()):
        self.rows = list(rows)

    def get(self, range_label, model):
        for r in self.rows:
            if r.range == range_label and r.model == model:
                return r
        raise KeyError((range_label, model))

    @property
    def models(self):
        seen = []
        for r in self.rows:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(STRATIFIED_COLUMNS)
        for r in self.rows:
            wr.writerow([r.range, r.model, _fmt(r.absrel), _fmt(r.rmse), _fmt(r.delta1), r.pixel_count])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            rd = csv.reader(f)
            header = next(rd)
            if tuple(header) != STRATIFIED_COLUMNS:
                raise ValueError(f"unexpected header {header}")
            return cls([MetricRow(r[0], r[1], _parse(r[2]), _parse(r[3]), _parse(r[4]), int(r[5]))
                        for r in rd])


def frame_masks(frames, ratio, seed):
    """The injection mask for each frame; shared by every model evaluated."""
    return [sample_mask(*f.gt.shape, ratio, [int(seed), i], allowed=f.valid) for i, f in enumerate(frames)]


def stratified_eval(models, frames, ratio=HEADLINE_RATIO, seed=0):
    """Evaluate ``{label: predict(rgb, sparse) -> depth}`` on ``frames``.

    Returns a MetricTable with the three bins plus Overall for every model.
    Every model sees the same injection mask on a given frame.
    """
    if callable(models):
        models = {"model": models}
    masks = frame_masks(frames, ratio, seed)
    pools = {m: [_Pool() for _ in range(4)] for m in models}
    for frame, mask in zip(frames, masks):
        sparse = sparsify(frame.gt, mask)
        sels = bin_masks(frame.gt, frame.valid)
        for label, predict in models.items():
            pred = predict(frame.rgb, sparse)
            for i, sel in enumerate(sels):
                pools[label][i].add(pred, frame.gt, sel)
    rows = []
    for label in models:
        overall = _Pool()
        for p in pools[label][:3]:
            overall.merge(p)
        pools[label][3] = overall
    for i, rng_label in enumerate(RANGE_LABELS + (OVERALL,)):
        for label in models:
            p = pools[label][i]
            rows.append(MetricRow(rng_label, label, *p.metrics(), p.n))
    return MetricTable(rows)


@dataclass
class AblationRow:
    ratio: float
    encoder: str
    absrel: float
    rmse: float


class AblationTable:
    def __init__(self, rows=()):
        self.rows = list(rows)

    def get(self, ratio, encoder):
        for r in self.rows:
            if abs(r.ratio - ratio) < 1e-12 and r.encoder == encoder:
                return r
        raise KeyError((ratio, encoder))

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(ABLATION_COLUMNS)
        for r in self.rows:
            wr.writerow([f"{r.ratio:.3f}", r.encoder, _fmt(r.absrel), _fmt(r.rmse)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            rd = csv.reader(f)
            header = next(rd)
            if tuple(header) != ABLATION_COLUMNS:
                raise ValueError(f"unexpected header {header}")
            return cls([AblationRow(float(r[0]), r[1], _parse(r[2]), _parse(r[3])) for r in rd])


def ablation_sweep(models, frames, ratios=ABLATION_RATIOS, seed=0):
    """Overall AbsRel/RMSE per ratio for each encoder, on paired masks."""
    rows = []
    for ratio in ratios:
        table = stratified_eval(models, frames, ratio, seed)
        for label in models:
            r = table.get(OVERALL, label)
            rows.append(AblationRow(float(ratio), label, r.absrel, r.rmse))
    return AblationTable(rows)


def bin_midpoints():
    return tuple((lo + hi) / 2 for lo, hi in zip(BIN_EDGES, BIN_EDGES[1:]))


def curve_export(table, path):
    """Write (bin midpoint, model, AbsRel) rows for plotting error vs distance."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(CURVE_COLUMNS)
        for mid, label in zip(bin_midpoints(), RANGE_LABELS):
            for model in table.models:
                wr.writerow([repr(mid), model, _fmt(table.get(label, model).absrel)])


def read_curve(path):
    with open(path, encoding="utf-8", newline="") as f:
        rd = csv.reader(f)
        next(rd)
        return [(float(r[0]), r[1], _parse(r[2])) for r in rd]
