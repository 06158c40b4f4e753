"""``sparsefuse`` command line: gen, train, eval, ablate, sparsify.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric abort.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .errors import ConfigurationError, DataError, DegenerateInputError, NumericAbort
from .evaluator import ablation_sweep, curve_export, stratified_eval
from .scene_gen import generate_frame, make_split, scene_seeds
from .sparsifier import bilinear_densify, sample_mask, sparsify
from .trainer import Trainer, train_pair
from .backbone import DepthModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("sparsefuse")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _stem(path):
    root, ext = os.path.splitext(path)
    return root if ext else path


def _ensure_dir(path):
    if path:
        os.makedirs(path, exist_ok=True)


# ----------------------------------------------------------------- commands

def cmd_gen(args):
    if args.scenes < 1:
        raise ConfigurationError("--scenes must be >= 1")
    if args.first < 0:
        raise ConfigurationError("--first must be >= 0")
    _ensure_dir(args.out)
    seeds = scene_seeds(args.seed, args.scenes, args.first)
    frames = [generate_frame(s, args.height, args.width) for s in seeds]
    io.write_scenes(args.out, frames, seed=args.seed)
    print(f"wrote {len(frames)} scenes to {args.out}")


def _train_frames(cfg, scenes_dir):
    if scenes_dir:
        return io.read_scenes(scenes_dir)
    sc = cfg.scene
    return make_split(sc.n_train, sc.n_eval, sc.seed, sc.height, sc.width)[0]


def _write_run(ckpt, model, cfg, log_):
    _ensure_dir(os.path.dirname(ckpt))
    io.save_checkpoint(ckpt, model, extra={"steps": cfg.train.steps})
    log_.to_csv(_stem(ckpt) + ".log.csv")
    io.write_config(_stem(ckpt) + ".config.yaml", cfg)


def cmd_train(args):
    cfg = io.load_config(args.config)
    frames = _train_frames(cfg, args.scenes)
    model = DepthModel(cfg.model)
    trainer = Trainer(model, frames, cfg.train, cfg.loss)
    log_ = trainer.run(progress_every=args.progress)
    _write_run(args.out, model, cfg, log_)
    print(f"trained {model.label} for {len(log_)} steps; final loss {log_.records[-1].loss:.6g}")


def _oracle(frames):
    by_id = {id(f.rgb): f.gt for f in frames}

    def predict(rgb, sparse):
        return by_id[id(rgb)]
    return predict


def cmd_eval(args):
    if not args.ckpt and not args.oracle:
        raise _UsageError("give at least one --ckpt or --oracle")
    frames = io.read_scenes(args.scenes)
    models = {}
    for path in args.ckpt or ():
        model, _ = io.load_checkpoint(path)
        label = model.label
        k = 2
        while label in models:
            label = f"{model.label}_{k}"
            k += 1
        models[label] = model.predict
    if args.oracle:
        models["oracle"] = _oracle(frames)
    table = stratified_eval(models, frames, args.ratio, args.seed)
    _ensure_dir(os.path.dirname(args.out))
    table.to_csv(args.out)
    if args.curve:
        curve_export(table, args.curve)
    print(f"evaluated {len(models)} model(s) on {len(frames)} scenes at ratio {args.ratio}")


def cmd_ablate(args):
    cfg = io.load_config(args.config)
    sc = cfg.scene
    train_frames, eval_frames = make_split(sc.n_train, sc.n_eval, sc.seed, sc.height, sc.width)
    pair = train_pair(cfg.model, cfg.train, train_frames, cfg.loss, progress_every=args.progress)
    if args.ckpt_dir:
        _ensure_dir(args.ckpt_dir)
        for enc, (model, log_) in pair.items():
            run_cfg = replace(cfg, model=model.cfg)
            _write_run(os.path.join(args.ckpt_dir, f"{enc}.ckpt"), model, run_cfg, log_)
    models = {enc: model.predict for enc, (model, _) in pair.items()}
    table = ablation_sweep(models, eval_frames, cfg.eval.ratios, cfg.eval.seed)
    _ensure_dir(os.path.dirname(args.out))
    table.to_csv(args.out)
    print(f"wrote {len(table.rows)} ablation rows to {args.out}")


def cmd_sparsify(args):
    depth = io.read_plane(args.depth)
    valid = np.isfinite(depth) & (depth > 0)
    mask = sample_mask(*depth.shape, args.ratio, args.seed, allowed=valid)
    s = sparsify(depth, mask)
    stem = _stem(args.out)
    io.write_raster(args.out, s.depth, io.F64)
    io.write_raster(stem + "_mask.slr", s.mask, io.MASK)
    if args.densify:
        io.write_raster(stem + "_dense.slr", bilinear_densify(s), io.F64)
    print(f"kept {s.valid_count()} of {depth.size} pixels")


# ------------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="sparsefuse", description="Sparse LiDAR injection into a monocular depth model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="render scenes to raster triplets plus a manifest")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--first", type=int, default=0, help="offset into the seed pool (held-out scenes follow the training ones)")
    g.add_argument("--height", type=int, default=48)
    g.add_argument("--width", type=int, default=96)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model from a config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--scenes", help="train on a generated scene directory instead of the config split")
    t.add_argument("--progress", type=int, default=0, metavar="N")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="distance-stratified evaluation")
    e.add_argument("--ckpt", action="append")
    e.add_argument("--scenes", required=True)
    e.add_argument("--ratio", type=float, default=0.005)
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--out", required=True)
    e.add_argument("--curve", help="also write the error-vs-distance curve CSV")
    e.add_argument("--oracle", action="store_true", help="add a predictor that returns ground truth")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train both encoders and sweep the injection ratios")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--ckpt-dir")
    a.add_argument("--progress", type=int, default=0, metavar="N")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sparsify", help="sample a sparse LiDAR-like mask from a depth raster")
    s.add_argument("--depth", required=True)
    s.add_argument("--ratio", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--densify", action="store_true")
    s.set_defaults(func=cmd_sparsify)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as e:
        print(f"sparsefuse: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except _UsageError as e:
        print(f"sparsefuse: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as e:
        print(f"sparsefuse: numeric abort: {e}", file=sys.stderr)
        print(json.dumps(e.dump, sort_keys=True, default=repr), file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigurationError as e:
        print(f"sparsefuse: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DegenerateInputError, OSError) as e:
        print(f"sparsefuse: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
