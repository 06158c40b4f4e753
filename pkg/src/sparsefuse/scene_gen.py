"""Procedural driving-like frames: ray casts against a ground plane and
axis-aligned boxes, with content spread over 1-150 m.

Camera frame: x right, y down, z forward.  The ground is the plane
``y = camera_height``.  Pixel ``(u, v)`` (column, row) looks along
``((u - cx) / fx, (v - cy) / fy, 1)``, so the ray parameter is the depth.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .evaluator import bin_masks

MAX_DEPTH = 160.0
MIN_BIN_FRACTION = 0.01
MAX_ATTEMPTS = 64

# box placement per distance band: (count, distance range, |lateral| max, width, height, length)
BOX_BANDS = (
    (3, (4.0, 45.0), 10.0, (1.5, 4.0), (1.2, 3.5), (2.0, 6.0)),
    (3, (52.0, 95.0), 20.0, (2.5, 9.0), (2.0, 9.0), (2.0, 8.0)),
    (4, (104.0, 146.0), 30.0, (3.0, 12.0), (3.0, 12.0), (2.0, 6.0)),
)
CAMERA_HEIGHT_RANGE = (1.2, 2.2)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def check(self, h, w):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise ConfigurationError("principal point lies outside the image")


def default_intrinsics(h, w):
    """Narrow-ish field of view with the horizon a third of the way down."""
    f = 1.25 * w
    return Intrinsics(f, f, (w - 1) / 2.0, round(h / 3) - 0.5)


@dataclass(frozen=True)
class Box:
    distance: float  # z of the box centre
    lateral: float   # x of the box centre
    width: float
    height: float
    length: float


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    camera_height: float = 1.5
    boxes: tuple = ()


@dataclass
class Frame:
    rgb: np.ndarray
    gt: np.ndarray
    valid: np.ndarray
    intrinsics: Intrinsics
    seed: int = 0
    cache: dict = field(default_factory=dict, repr=False, compare=False)


def _rays(intr, h, w):
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return (u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy


def _hit_box(rx, ry, box, cam_h):
    """Entry depth (inf on miss) and the entry axis (0=x, 1=y, 2=z)."""
    lo = np.array([box.lateral - box.width / 2, cam_h - box.height, box.distance - box.length / 2])
    hi = np.array([box.lateral + box.width / 2, cam_h, box.distance + box.length / 2])
    t_near = np.zeros(rx.shape)
    t_far = np.full(rx.shape, np.inf)
    axis = np.full(rx.shape, 2, dtype=np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        for a, d in ((0, rx), (1, ry), (2, np.ones_like(rx))):
            t0 = lo[a] / d
            t1 = hi[a] / d
            near = np.minimum(t0, t1)
            far = np.maximum(t0, t1)
            parallel = d == 0
            inside = (lo[a] <= 0) & (0 <= hi[a])
            near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
            far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
            axis = np.where(near > t_near, a, axis)
            t_near = np.maximum(t_near, near)
            t_far = np.minimum(t_far, far)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf), axis


def _box_color(seed, idx):
    return np.random.default_rng([seed, 7919, idx]).uniform(0.15, 0.9, size=3)


def render(spec, intrinsics, h, w):
    """Ray-cast one frame; returns ``(rgb (3,H,W), depth (H,W), validity (H,W))``."""
    if h % 16 or w % 16:
        raise ConfigurationError(f"frame extent {h}x{w} is not divisible by 16")
    intrinsics.check(h, w)
    rx, ry = _rays(intrinsics, h, w)
    cam_h = spec.camera_height
    with np.errstate(divide="ignore"):
        depth = np.where(ry > 0, cam_h / np.where(ry > 0, ry, 1.0), np.inf)
    obj = np.where(np.isfinite(depth), 0, -1)
    face = np.full((h, w), 1, dtype=np.int8)
    for i, box in enumerate(spec.boxes):
        t, ax = _hit_box(rx, ry, box, cam_h)
        closer = t < depth
        depth = np.where(closer, t, depth)
        obj = np.where(closer, i + 1, obj)
        face = np.where(closer, ax, face)
    if not np.isfinite(depth).any():
        raise ConfigurationError("scene has no geometry in view")
    valid = np.isfinite(depth) & (depth <= MAX_DEPTH)
    gt = np.where(valid, depth, 0.0)

    rgb = np.empty((3, h, w))
    sky = np.array([0.55, 0.70, 0.95])
    fade = np.clip((np.arange(h) / h)[:, None] * np.ones((1, w)), 0, 1)
    for c in range(3):
        rgb[c] = sky[c] * (0.8 + 0.2 * fade)
    ground = obj == 0
    zg = np.where(ground, depth, 0.0)
    xg = zg * rx
    stripe = (np.floor(zg / 4.0) % 2) * 0.06
    lane = (np.abs(np.abs(xg) - 1.75) < 0.12).astype(np.float64) * 0.4
    shade = 0.32 + stripe + lane
    for c in range(3):
        rgb[c] = np.where(ground, shade, rgb[c])
    face_shade = np.array([0.72, 0.88, 1.0])
    for i in range(len(spec.boxes)):
        sel = obj == i + 1
        if sel.any():
            col = _box_color(spec.seed, i)
            for c in range(3):
                rgb[c][sel] = col[c] * face_shade[face[sel]]
    return rgb, gt, valid


def backproject(gt, intrinsics):
    """Pinhole back-projection to an (H, W, 3) point map."""
    h, w = gt.shape
    rx, ry = _rays(intrinsics, h, w)
    return np.stack([gt * rx, gt * ry, gt], axis=-1)


def bin_fractions(gt, valid):
    n = max(int(valid.sum()), 1)
    return [float(sel.sum()) / n for sel in bin_masks(gt, valid)]


def covers_bins(gt, valid, min_fraction=MIN_BIN_FRACTION):
    return all(f >= min_fraction for f in bin_fractions(gt, valid))


def random_scene(seed, attempt=0):
    rng = np.random.default_rng([int(seed), int(attempt)])
    cam_h = float(rng.uniform(*CAMERA_HEIGHT_RANGE))
    boxes = []
    for count, (d0, d1), lat, wr, hr, lr in BOX_BANDS:
        for _ in range(count):
            boxes.append(Box(float(rng.uniform(d0, d1)), float(rng.uniform(-lat, lat)),
                             float(rng.uniform(*wr)), float(rng.uniform(*hr)), float(rng.uniform(*lr))))
    return SceneSpec(int(seed), cam_h, tuple(boxes))


def generate_frame(seed, h, w, intrinsics=None):
    """Render the first attempt for ``seed`` whose depth covers all three bins."""
    intrinsics = intrinsics or default_intrinsics(h, w)
    for attempt in range(MAX_ATTEMPTS):
        spec = random_scene(seed, attempt)
        rgb, gt, valid = render(spec, intrinsics, h, w)
        if covers_bins(gt, valid):
            return Frame(rgb, gt, valid, intrinsics, int(seed))
    raise DegenerateInputError(f"seed {seed}: no attempt met the distance-bin coverage rule")


def scene_seeds(seed, count, first=0):
    """Distinct frame seeds ``first .. first+count-1`` of the pool for ``seed``.

    Seeds are drawn one at a time, so any prefix of the pool is the same
    whatever the total requested.
    """
    rng = np.random.default_rng([int(seed), 0x5CE])
    pool, seen = [], set()
    while len(pool) < first + count:
        s = int(rng.integers(2**31 - 1))
        if s not in seen:
            seen.add(s)
            pool.append(s)
    return pool[first:]


def make_split(n_train, n_eval, seed, h=48, w=96, intrinsics=None):
    """Disjoint train/eval frame lists drawn from one seeded pool.

    Training frames take pool positions ``[0, n_train)`` and evaluation frames
    the next ``n_eval``.
    """
    if n_train < 1 or n_eval < 1:
        raise ConfigurationError("split sizes must be at least 1")
    seeds = scene_seeds(seed, n_train + n_eval)
    train_seeds, eval_seeds = seeds[:n_train], seeds[n_train:]
    if set(train_seeds) & set(eval_seeds):
        raise DegenerateInputError("train and eval seeds overlap")
    train = [generate_frame(s, h, w, intrinsics) for s in train_seeds]
    held = [generate_frame(s, h, w, intrinsics) for s in eval_seeds]
    return train, held
