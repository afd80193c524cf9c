"""Command-line entry point: ``eyeparse <command> [options]``.

Exit codes: 0 success, 1 usage, 2 data or configuration problem,
3 numeric or training failure.
"""

import argparse
import os
import sys

from .errors import (CheckpointError, ConfigurationError, GenerationError, InputError,
                     NumericError, TrainingError)
from .numcore import RngState

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    p.add_argument("--config", default=None, help="key = value settings file")
    p.add_argument("--out", default=None, help="output directory")


def build_parser():
    parser = _Parser(prog="eyeparse", description="Eye-window parsing of indoor point clouds.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate labelled synthetic rooms")
    _common(p)
    p.add_argument("--scenes", type=int, default=None, help="number of rooms")

    p = sub.add_parser("voxelize", help="write the occupancy grid of a point file")
    _common(p)
    p.add_argument("input", help="point file (x y z r g b [label])")
    p.add_argument("--unit-size", type=float, default=None)

    for name, what in (("train-cnn", "reward CNNs"), ("train-dqn", "Q networks"),
                       ("train-rnn", "residual RNNs")):
        p = sub.add_parser(name, help=f"train the {what} on the training share of a scene directory")
        _common(p)
        p.add_argument("data", help="directory of scene files")

    p = sub.add_parser("parse", help="label scenes with trained models")
    _common(p)
    p.add_argument("inputs", nargs="+", help="scene files or a scene directory")
    p.add_argument("--models", required=True, help="directory of trained checkpoints")
    p.add_argument("--split", choices=("all", "train", "test"), default="all",
                   help="with a directory input, parse only this share of the split")

    p = sub.add_parser("eval", help="accuracy/precision table of labelled output against truth")
    _common(p)
    p.add_argument("predicted", help="labelled output file")
    p.add_argument("truth", help="scene file with ground-truth labels")

    p = sub.add_parser("heatmap", help="run one class search and dump the visit heatmap")
    _common(p)
    p.add_argument("input", help="scene file")
    p.add_argument("--models", required=True)
    p.add_argument("--class", dest="cls", required=True, help="class name to search")
    return parser


def _config(args, **extra):
    from .pipeline.config import load_config
    overrides = {"seed": args.seed}
    overrides.update(extra)
    return load_config(args.config, overrides)


def _out(args, default):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _say(msg):
    print(msg, flush=True)


def _training_split(data, cfg):
    from .pipeline.data import load_scene, scene_paths, split_dataset
    paths = scene_paths(data)
    train, test = split_dataset(paths, cfg.train_fraction, cfg.seed)
    return [load_scene(p) for p in train], train, test


def _write_split(out, train, test):
    with open(os.path.join(out, "split.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"train {os.path.basename(p)}\n" for p in train)
        fh.writelines(f"test {os.path.basename(p)}\n" for p in test)


def cmd_synth(args):
    from .pipeline.data import from_synthetic, save_scene
    from .pipeline.synth import generate_synthetic_scene
    cfg = _config(args, scenes=args.scenes)
    out = _out(args, "scenes")
    for i in range(cfg.scenes):
        name = f"room_{i:03d}"
        scene = from_synthetic(generate_synthetic_scene(seed=cfg.seed * 1000 + i), name)
        save_scene(scene, os.path.join(out, name + ".txt"))
        _say(f"wrote {name}.txt points={len(scene.cloud)} objects={len(scene.objects)}")
    return EXIT_OK


def cmd_voxelize(args):
    from .pipeline.data import load_scene
    from .voxel import write_grid
    cfg = _config(args, unit_size=args.unit_size)
    scene = load_scene(args.input)
    grid = scene.grid(cfg.unit_size)
    out = _out(args, ".")
    path = os.path.join(out, scene.name + ".grid")
    write_grid(path, grid)
    _say(f"wrote {path} dims={grid.dims} occupied={grid.n_units}")
    return EXIT_OK


def _load_models(directory, cfg):
    from .pipeline.parse import ModelSet
    return ModelSet.load(directory, tuple(cfg.classes), cfg.unit_size)


def cmd_train_cnn(args):
    from .pipeline.parse import ModelSet, object_statistics, train_cnns
    cfg = _config(args)
    scenes, train, test = _training_split(args.data, cfg)
    out = _out(args, "models")
    volume, expected, size = object_statistics(scenes, cfg.classes)
    models = ModelSet(tuple(cfg.classes), cfg.unit_size, volume=volume, expected=expected,
                      size=size)
    train_cnns(scenes, cfg, models, _say)
    models.save(out)
    _write_split(out, train, test)
    return EXIT_OK


def cmd_train_dqn(args):
    from .pipeline.parse import train_qnets
    cfg = _config(args)
    scenes, _, _ = _training_split(args.data, cfg)
    out = _out(args, "models")
    models = _load_models(out, cfg)
    if not models.cnn:
        raise ConfigurationError(f"no reward CNNs in {out}; run train-cnn first")
    train_qnets(scenes, cfg, models, _say)
    models.save(out)
    return EXIT_OK


def cmd_train_rnn(args):
    from .pipeline.parse import train_rnns
    cfg = _config(args)
    scenes, _, _ = _training_split(args.data, cfg)
    out = _out(args, "models")
    models = _load_models(out, cfg)
    train_rnns(scenes, cfg, models, _say)
    models.save(out)
    return EXIT_OK


def _parse_inputs(args, cfg):
    from .pipeline.data import scene_paths, split_dataset
    paths = []
    for item in args.inputs:
        if os.path.isdir(item):
            found = scene_paths(item)
            if args.split != "all":
                train, test = split_dataset(found, cfg.train_fraction, cfg.seed)
                found = train if args.split == "train" else test
            paths.extend(found)
        elif os.path.exists(item):
            paths.append(item)
        else:
            raise InputError(f"no such scene file or directory: {item}")
    return paths


def cmd_parse(args):
    from .pipeline.data import load_scene
    from .pipeline.parse import parse_scene
    cfg = _config(args)
    if not os.path.isdir(args.models):
        raise InputError(f"model directory {args.models} does not exist; "
                         "run train-cnn, train-dqn and train-rnn first")
    models = _load_models(args.models, cfg)
    out = _out(args, "parsed")
    for path in _parse_inputs(args, cfg):
        scene = load_scene(path)
        labeled, metrics = parse_scene(scene, models, cfg, _say)
        target = os.path.join(out, scene.name + ".labels.txt")
        labeled.write(target)
        _say(f"wrote {target}")
        if metrics is not None:
            _say(metrics.format_table().rstrip())
            with open(os.path.join(out, scene.name + ".metrics.csv"), "w", encoding="utf-8",
                      newline="\n") as fh:
                fh.write(metrics.to_csv())
    return EXIT_OK


def cmd_eval(args):
    from .pipeline.metrics import evaluate_metrics
    from .voxel import read_points
    cfg = _config(args)
    pred = read_points(args.predicted)
    truth = read_points(args.truth)
    if pred.labels is None or truth.labels is None:
        raise InputError("both files need a label column")
    table = evaluate_metrics(pred.labels, truth.labels, cfg.classes)
    _say(table.format_table().rstrip())
    if args.out:
        out = _out(args, ".")
        with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(table.to_csv())
    return EXIT_OK


def cmd_heatmap(args):
    from .dqn import search_class
    from .pipeline.data import load_scene
    from .pipeline.parse import window_starter
    cfg = _config(args)
    if args.cls not in cfg.classes:
        raise ConfigurationError(f"unknown class {args.cls!r}; known: {', '.join(cfg.classes)}")
    cid = cfg.classes.index(args.cls)
    models = _load_models(args.models, cfg)
    if cid not in models.cnn or cid not in models.qnet:
        raise ConfigurationError(f"no reward CNN / Q network for {args.cls!r} in {args.models}")
    scene = load_scene(args.input)
    easy = [i for i, c in enumerate(cfg.classes) if c in cfg.easy_classes]
    mask = None
    if scene.cloud.labels is not None:
        import numpy as np
        mask = ~np.isin(scene.cloud.labels, easy)
    grid = scene.grid(cfg.unit_size, mask)
    res = search_class(grid, models.qnet[cid], cfg.search_config(), RngState(cfg.seed),
                       reward_model=models.cnn[cid], start=window_starter(models, cid, cfg))
    out = _out(args, "heatmap")
    res.heatmap.write_text(os.path.join(out, f"{scene.name}_{args.cls}.heat"))
    res.heatmap.write_slices(out, prefix=f"{scene.name}_{args.cls}")
    with open(os.path.join(out, f"{scene.name}_{args.cls}.log"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(res.log) + "\n")
    _say(f"steps={res.stats['steps']} locks={len(res.locks)} visits={res.heatmap.visits}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "voxelize": cmd_voxelize, "train-cnn": cmd_train_cnn,
    "train-dqn": cmd_train_dqn, "train-rnn": cmd_train_rnn, "parse": cmd_parse,
    "eval": cmd_eval, "heatmap": cmd_heatmap,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        sys.stderr.write(parser.format_help())
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    if args.command is None:
        sys.stderr.write(parser.format_help())
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (InputError, ConfigurationError, CheckpointError, GenerationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except (NumericError, TrainingError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
