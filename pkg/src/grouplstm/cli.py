"""Command-line entry point: gen-data, train, eval, bench, gradcheck, inspect.

Exit codes: 0 success, 2 usage error, 3 data error, 4 divergence,
5 gradient check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import data, pipeline
from .errors import ConfigError, DivergenceError, InputError
from .model import VARIANTS, ModelConfig, load_checkpoint, save_checkpoint
from .nn import normalize_pool_mode

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE, EXIT_GRADCHECK = 0, 2, 3, 4, 5
GRADCHECK_LIMIT = 1e-4
POOL_CHOICES = ("max", "sum", "avg")
SPLITS = ("train", "test", "all")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # print the full help, not just the usage line, on bad flags
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def _add_split(p: argparse.ArgumentParser, default: str) -> None:
    p.add_argument("--split", choices=SPLITS, default=default,
                   help=f"which part of a group-level split to use (default {default})")
    p.add_argument("--split-seed", type=int, default=0, help="seed of the train/test split (default 0)")
    p.add_argument("--train-fraction", type=float, default=2 / 3,
                   help="fraction of scene groups used for training (default 2/3)")


def _add_budget(p: argparse.ArgumentParser) -> None:
    d = pipeline.TrainConfig()
    p.add_argument("--epochs", type=int, help="epochs for every stage (overridden by the per-stage flags)")
    p.add_argument("--person-epochs", type=int, help=f"stage-1 epochs (default {d.person_epochs})")
    p.add_argument("--group-epochs", type=int, help=f"stage-2 epochs (default {d.group_epochs})")
    p.add_argument("--lr", type=float, default=d.lr, help=f"learning rate (default {d.lr})")
    p.add_argument("--momentum", type=float, default=d.momentum, help=f"momentum (default {d.momentum})")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help=f"scenes per step (default {d.batch_size})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grouplstm", description="Two-stage hierarchical LSTM for group activity recognition.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a seeded synthetic dataset in HGRDATA format")
    dflt = data.GenConfig()
    g.add_argument("--out", required=True, help="output HGRDATA file")
    g.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    g.add_argument("--scenes", type=int, default=dflt.num_scenes, help=f"number of scenes (default {dflt.num_scenes})")
    g.add_argument("--noise", type=float, default=dflt.noise_std, help=f"feature noise std (default {dflt.noise_std})")
    g.add_argument("--confusable", action=argparse.BooleanOptionalAction, default=True,
                   help="alias the 'after' actions onto plain prototypes (default on)")
    g.add_argument("--persons", type=int, nargs=2, metavar=("KMIN", "KMAX"), default=(dflt.k_min, dflt.k_max),
                   help=f"range of persons per scene (default {dflt.k_min} {dflt.k_max})")
    g.add_argument("--timesteps", type=int, default=dflt.timesteps, help=f"timesteps T (default {dflt.timesteps})")
    g.add_argument("--feature-dim", type=int, default=dflt.feature_dim, help=f"feature width (default {dflt.feature_dim})")
    g.add_argument("--actions", type=int, default=dflt.num_actions, help=f"action classes A (default {dflt.num_actions})")
    g.add_argument("--activities", type=int, default=dflt.num_activities,
                   help=f"activity classes G (default {dflt.num_activities})")
    g.add_argument("--groups", type=int, default=dflt.num_groups, help=f"scene groups (default {dflt.num_groups})")

    t = sub.add_parser("train", help="train one variant and write an HGR1 checkpoint")
    t.add_argument("--data", required=True, help="HGRDATA file")
    t.add_argument("--variant", choices=VARIANTS, default="two_stage", help="architecture (default two_stage)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int, default=0, help="initialisation and shuffling seed (default 0)")
    t.add_argument("--pool", choices=POOL_CHOICES, default="max", help="person pooling (default max)")
    t.add_argument("--report", help="write per-stage training reports as CSV")
    _add_budget(t)
    _add_split(t, "train")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True, help="HGRDATA file")
    e.add_argument("--ckpt", required=True, help="HGR1 checkpoint")
    e.add_argument("--cm", help="write the confusion matrix as CSV")
    _add_split(e, "test")

    b = sub.add_parser("bench", help="train and compare the baselines under one budget")
    b.add_argument("--data", required=True, help="HGRDATA file")
    b.add_argument("--seed", type=int, default=0, help="seed for split, initialisation and shuffling (default 0)")
    b.add_argument("--out", required=True,
                   help="CSV table; with several pool modes, one file per mode named <stem>_<pool><suffix>")
    b.add_argument("--pool", choices=POOL_CHOICES, nargs="+", default=["max"], help="pooling mode(s) (default max)")
    b.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(pipeline.BENCH_VARIANTS),
                   help="variants to compare (default b1 b4 b5 b6 b7 two_stage)")
    b.add_argument("--train-fraction", type=float, default=2 / 3, help="fraction of groups for training")
    _add_budget(b)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    c.add_argument("--config", choices=("tiny", "default"), default="tiny", help="model size (default tiny)")
    c.add_argument("--seed", type=int, default=1, help="weights and probe scene seed (default 1)")
    c.add_argument("--variant", choices=VARIANTS, default="two_stage", help="architecture (default two_stage)")
    c.add_argument("--persons", type=int, default=3, help="persons in the probe scene (default 3)")
    c.add_argument("--probes", type=int, help="coordinates probed per tensor (default all)")

    i = sub.add_parser("inspect", help="print a checkpoint's configuration and parameter counts")
    i.add_argument("--ckpt", required=True, help="HGR1 checkpoint")
    return parser


def _train_config(args) -> pipeline.TrainConfig:
    d = pipeline.TrainConfig()
    person = args.person_epochs if args.person_epochs is not None else (args.epochs if args.epochs is not None
                                                                        else d.person_epochs)
    group = args.group_epochs if args.group_epochs is not None else (args.epochs if args.epochs is not None
                                                                     else d.group_epochs)
    if args.lr <= 0 or not 0 <= args.momentum < 1:
        raise UsageError("need lr > 0 and 0 <= momentum < 1")
    try:
        return pipeline.TrainConfig(person, group, args.lr, args.momentum, args.batch_size)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _select(ds: data.Dataset, args) -> data.Dataset:
    if args.split == "all":
        return ds
    if not 0 < args.train_fraction < 1:
        raise UsageError("--train-fraction must lie strictly between 0 and 1")
    train, test = data.split(ds, args.train_fraction, args.split_seed)
    return train if args.split == "train" else test


def _config_for(ds: data.Dataset, variant: str, pool: str) -> ModelConfig:
    T = {s.timesteps for s in ds}
    if len(T) != 1:
        raise InputError(f"scenes disagree on timesteps: {sorted(T)}")
    return ModelConfig(feature_dim=ds.feature_dim, num_actions=ds.num_actions, num_activities=ds.num_activities,
                       timesteps=T.pop(), pool=pool, variant=variant)


def cmd_gen_data(args) -> int:
    cfg = data.GenConfig(num_scenes=args.scenes, k_min=args.persons[0], k_max=args.persons[1],
                         timesteps=args.timesteps, feature_dim=args.feature_dim, num_actions=args.actions,
                         num_activities=args.activities, noise_std=args.noise, seed=args.seed,
                         confusable=args.confusable, num_groups=args.groups)
    try:
        ds = data.generate(cfg)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    data.save_dataset(ds, args.out)
    counts = ", ".join(f"{n}={c}" for n, c in zip(ds.activity_names, ds.activity_counts()))
    print(f"wrote {len(ds)} scenes to {args.out} ({counts})")
    return EXIT_OK


def cmd_train(args) -> int:
    tc = _train_config(args)
    ds = _select(data.load_dataset(args.data), args)
    cfg = _config_for(ds, args.variant, normalize_pool_mode(args.pool))
    model, reports = pipeline.train_model(ds, cfg, args.seed, tc)
    save_checkpoint(model, args.out)
    for rep in reports:
        print(f"stage {rep.stage}: loss {rep.initial_loss:.6f} -> {rep.final_loss:.6f} "
              f"over {len(rep.epoch_losses)} epochs ({rep.wall_time:.1f}s)")
    acc, _ = pipeline.evaluate(model, ds)
    print(f"train accuracy {acc:.6f} on {len(ds)} scenes")
    print(f"saved {cfg.variant} checkpoint to {args.out}")
    if args.report:
        pipeline.write_text(args.report, "".join(r.to_csv(header=(k == 0)) for k, r in enumerate(reports)))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    ds = data.load_dataset(args.data)
    cfg = model.config
    if cfg.num_activities != ds.num_activities:
        raise InputError(f"checkpoint has G={cfg.num_activities} activities but dataset header has "
                         f"G={ds.num_activities}")
    if cfg.feature_dim != ds.feature_dim:
        raise InputError(f"checkpoint expects D_in={cfg.feature_dim} but dataset header has D_in={ds.feature_dim}")
    ds = _select(ds, args)
    acc, cm = pipeline.evaluate(model, ds)
    print(f"accuracy {acc:.6f} ({int(round(acc * len(ds)))}/{len(ds)} scenes, split {args.split})")
    print(cm.to_csv(), end="")
    if args.cm:
        pipeline.write_text(args.cm, cm.to_csv())
    return EXIT_OK


def _pool_path(out: str, pool: str, many: bool) -> Path:
    path = Path(out)
    return path.with_name(f"{path.stem}_{pool}{path.suffix}") if many else path


def cmd_bench(args) -> int:
    tc = _train_config(args)
    if not 0 < args.train_fraction < 1:
        raise UsageError("--train-fraction must lie strictly between 0 and 1")
    ds = data.load_dataset(args.data)
    many = len(args.pool) > 1
    for pool in args.pool:
        cfg = _config_for(ds, "two_stage", normalize_pool_mode(pool))
        table = pipeline.bench_all(ds, cfg, args.seed, tc, args.variants, args.train_fraction)
        path = _pool_path(args.out, pool, many)
        pipeline.write_text(path, table.to_csv())
        print(table.format())
        print(f"wrote {path}\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config == "tiny":
        cfg = ModelConfig.tiny(variant=args.variant)
    else:
        cfg = ModelConfig(variant=args.variant)
    if args.persons < 1:
        raise UsageError("--persons must be >= 1")
    from .model import init_model
    model = pipeline.randomize(init_model(cfg, args.seed), args.seed)
    scene = pipeline.random_scene(cfg, args.persons, args.seed + 1)
    res = pipeline.gradcheck_model(model, scene, args.probes, args.seed)
    for name, err in res.per_tensor.items():
        print(f"  {name:<28} {err:.3e}")
    ok = res.max_rel_error < GRADCHECK_LIMIT
    print(f"max relative error {res.max_rel_error:.3e} over {res.probes} coordinates "
          f"({'ok' if ok else 'FAIL'}, limit {GRADCHECK_LIMIT:g})")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.ckpt)
    cfg = model.config
    for f in fields(cfg):
        print(f"{f.name:<16} {getattr(cfg, f.name)}")
    print("parameters:")
    for part, params in model.parts.items():
        n = sum(a.size for _, a in params.tensors())
        shapes = " ".join(f"{name}{tuple(a.shape)}" for name, a in params.tensors())
        print(f"  {part:<14} {n:>7}  {shapes}")
    print(f"total {model.num_params()}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
            "gradcheck": cmd_gradcheck, "inspect": cmd_inspect}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"grouplstm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"grouplstm {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (InputError, ConfigError, OSError) as exc:
        print(f"grouplstm {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
