"""Bit-exact file formats: rasters, checkpoints, scene directories and run configs.

Raster layout (little-endian)::

    b"SLR1" | dtype u8 (0 f32, 1 f64, 2 u8 mask) | channels u32 | height u32 | width u32 | payload

Checkpoint layout (little-endian)::

    b"SFCK" | version u32 | header length u32 | header JSON (utf-8) | f64 arrays

The header lists the model config and an ordered manifest of
``(name, shape)``; arrays follow back to back in manifest order.
"""
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .backbone import DepthModel, ModelConfig
from .errors import ConfigurationError, DataError
from .losses import LossWeights
from .scene_gen import Frame, Intrinsics
from .trainer import TrainConfig

RASTER_MAGIC = b"SLR1"
RASTER_HEADER = struct.Struct("<4sBIII")
RASTER_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
F32, F64, MASK = 0, 1, 2

CKPT_MAGIC = b"SFCK"
CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sII")

MANIFEST = "manifest.json"


# ------------------------------------------------------------------ rasters

def encode_raster(array, code):
    if code not in RASTER_DTYPES:
        raise ConfigurationError(f"unknown raster dtype code {code}")
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ConfigurationError(f"rasters hold (C, H, W) or (H, W) arrays, got {a.shape}")
    if code == MASK and a.dtype != np.bool_ and not np.isin(a, (0, 1)).all():
        raise ConfigurationError("mask rasters hold only 0/1")
    payload = np.ascontiguousarray(a, dtype=RASTER_DTYPES[code]).tobytes()
    return RASTER_HEADER.pack(RASTER_MAGIC, code, *a.shape) + payload


def decode_raster(blob):
    """Returns ``(array (C, H, W), dtype code)``; masks come back as bool."""
    if len(blob) < RASTER_HEADER.size:
        raise DataError("raster shorter than its header")
    magic, code, c, h, w = RASTER_HEADER.unpack_from(blob)
    if magic != RASTER_MAGIC:
        raise DataError(f"bad raster magic {magic!r}")
    if code not in RASTER_DTYPES:
        raise DataError(f"unknown raster dtype code {code}")
    dt = RASTER_DTYPES[code]
    need = c * h * w * dt.itemsize
    if len(blob) - RASTER_HEADER.size != need:
        raise DataError(f"raster payload is {len(blob) - RASTER_HEADER.size} bytes, expected {need}")
    a = np.frombuffer(blob, dtype=dt, offset=RASTER_HEADER.size).reshape(c, h, w)
    a = a.astype(bool) if code == MASK else a.astype(a.dtype.newbyteorder("="))
    return a, code


def write_raster(path, array, code=F64):
    with open(path, "wb") as f:
        f.write(encode_raster(array, code))


def read_raster(path):
    try:
        with open(path, "rb") as f:
            return decode_raster(f.read())
    except FileNotFoundError as e:
        raise DataError(f"missing raster {path}") from e


def read_plane(path):
    """Single-channel raster as an (H, W) array."""
    a, _ = read_raster(path)
    if a.shape[0] != 1:
        raise DataError(f"{path}: expected one channel, found {a.shape[0]}")
    return a[0]


def sha256_file(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


# ---------------------------------------------------------- scene directory

def scene_paths(directory, index):
    stem = f"{directory}/scene_{index:04d}"
    return f"{stem}_rgb.slr", f"{stem}_depth.slr", f"{stem}_valid.slr"


def write_scenes(directory, frames, seed=None):
    """Write raster triplets plus a JSON manifest with seeds and hashes."""
    entries = []
    for i, fr in enumerate(frames):
        paths = scene_paths(directory, i)
        write_raster(paths[0], fr.rgb, F64)
        write_raster(paths[1], fr.gt, F64)
        write_raster(paths[2], fr.valid, MASK)
        entries.append({
            "seed": int(fr.seed),
            "intrinsics": asdict(fr.intrinsics),
            "files": {kind: {"name": p.rsplit("/", 1)[-1], "sha256": sha256_file(p)}
                      for kind, p in zip(("rgb", "depth", "valid"), paths)},
        })
    manifest = {"format": "SLR1", "split_seed": seed, "scenes": entries}
    with open(f"{directory}/{MANIFEST}", "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def read_scenes(directory, verify=True):
    try:
        with open(f"{directory}/{MANIFEST}", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"no {MANIFEST} in {directory}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable manifest: {e}") from e
    frames = []
    for entry in manifest.get("scenes", []):
        planes = {}
        for kind, meta in entry["files"].items():
            path = f"{directory}/{meta['name']}"
            if verify and sha256_file(path) != meta["sha256"]:
                raise DataError(f"{path}: hash differs from manifest")
            planes[kind], _ = read_raster(path)
        gt, valid = planes["depth"][0], planes["valid"][0]
        if planes["rgb"].shape[1:] != gt.shape or valid.shape != gt.shape:
            raise DataError(f"scene {entry['seed']}: raster extents disagree")
        frames.append(Frame(planes["rgb"], gt, valid, Intrinsics(**entry["intrinsics"]), entry["seed"]))
    if not frames:
        raise DataError(f"{directory}: manifest lists no scenes")
    return frames


# -------------------------------------------------------------- checkpoints

def model_state(model):
    """Ordered ``(name, array)`` pairs: parameters, then buffers."""
    return ([("param." + k, v) for k, v in model.named_parameters()]
            + [("buffer." + k, v) for k, v in model.named_buffers()])


def save_checkpoint(path, model, extra=None):
    state = model_state(model)
    header = {
        "model": model.cfg.to_dict(),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in state],
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(hb)))
        f.write(hb)
        for _, v in state:
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the model from its config and restore every array; returns ``(model, extra)``."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise DataError(f"missing checkpoint {path}") from e
    if len(blob) < _CKPT_PREFIX.size:
        raise DataError("checkpoint shorter than its header")
    magic, version, n = _CKPT_PREFIX.unpack_from(blob)
    if magic != CKPT_MAGIC:
        raise DataError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    start = _CKPT_PREFIX.size
    header = json.loads(blob[start:start + n].decode("utf-8"))
    model = DepthModel(ModelConfig(**header["model"]))
    state = dict(model_state(model))
    if [a["name"] for a in header["arrays"]] != list(state):
        raise DataError("checkpoint manifest does not match the model built from its config")
    offset = start + n
    for a in header["arrays"]:
        target = state[a["name"]]
        if tuple(a["shape"]) != target.shape:
            raise DataError(f"{a['name']}: shape {a['shape']} != {list(target.shape)}")
        nbytes = target.size * 8
        if offset + nbytes > len(blob):
            raise DataError("checkpoint payload truncated")
        target[...] = np.frombuffer(blob, "<f8", target.size, offset).reshape(target.shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError("trailing bytes after checkpoint payload")
    return model, header.get("extra", {})


# ------------------------------------------------------------- run configs

@dataclass
class SceneConfig:
    n_train: int = 64
    n_eval: int = 16
    seed: int = 0
    height: int = 48
    width: int = 96

    def __post_init__(self):
        if self.n_train < 1 or self.n_eval < 1:
            raise ConfigurationError("scene counts must be >= 1")
        if self.height % 16 or self.width % 16 or self.height <= 0 or self.width <= 0:
            raise ConfigurationError("frame extent must be a positive multiple of 16")


@dataclass
class EvalConfig:
    ratio: float = 0.005
    seed: int = 1
    ratios: tuple = (0.005, 0.008, 0.010, 0.015, 0.020, 0.030)

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        for r in (self.ratio,) + self.ratios:
            if not 0.0 < r <= 1.0:
                raise ConfigurationError(f"ratio {r} outside (0, 1]")


_SECTIONS = {"scene": SceneConfig, "model": ModelConfig, "train": TrainConfig,
             "loss": LossWeights, "eval": EvalConfig}


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping of sections")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config section(s): {sorted(unknown)}")
        built = {}
        for name, kind in _SECTIONS.items():
            sec = data.get(name) or {}
            if not isinstance(sec, dict):
                raise ConfigurationError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(kind)}
            bad = set(sec) - allowed
            if bad:
                raise ConfigurationError(f"unknown key(s) in {name!r}: {sorted(bad)}")
            try:
                built[name] = kind(**sec)
            except TypeError as e:
                raise ConfigurationError(f"section {name!r}: {e}") from e
        return cls(**built)

    def to_dict(self):
        out = {}
        for name in _SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise DataError(f"missing config {path}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"unparseable config: {e}") from e
    return RunConfig.from_dict(data)


def write_config(path, cfg):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(cfg.to_yaml())
