"""``geomaml`` command line: generate, train, evaluate, analyze.

Every command is a pure function of the config file, its input files and the
seed. Sub-seeds come from :func:`geomaml.seeding.derive_seed` with a fixed
purpose string per consumer.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure
(divergence), 4 missing or unreadable input.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    default_alphas,
    embedding_to_csv,
    loss_surface_1d,
    sample_slice_tasks,
    slice_to_csv,
    weight_adaptation_map,
)
from .checkpoint import Checkpoint, CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import ConfigSyntaxError, ExperimentConfig, dump_config, load_config
from .data import (
    META_TEST,
    META_VAL,
    GeneratorConfigError,
    SamplingExhaustedError,
    TileFormatError,
    generate_synthetic_regions,
    load_tiles,
    region_features,
    split_meta_clustered,
    split_meta_random,
    split_to_map,
    write_tiles,
)
from .evaluation import evaluation_tasks, pooled_to_csv, rows_to_csv, shot_curve
from .models import CnnConfig, ConfigError, UnetConfig, build_cnn, build_unet
from .seeding import derive_seed
from .training import DivergenceError, finetune_grid_search, maml_train, pretrain

log = logging.getLogger("geomaml")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4


class UsageError(Exception):
    pass


class MissingInputError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _resolve(cfg, out, name):
    p = Path(name)
    return p if p.is_absolute() else out / p


def _dataset_dir(cfg, out):
    return _resolve(cfg, out, cfg.paths.dataset_dir)


def load_dataset(cfg, out):
    """Load tiles from disk and apply the configured meta-split."""
    if cfg.dataset.source == "files":
        index = Path(cfg.dataset.index)
    else:
        index = _dataset_dir(cfg, out) / "index.tsv"
    if not index.exists():
        hint = " (run `geomaml generate` first)" if cfg.dataset.source == "synthetic" else ""
        raise MissingInputError(f"dataset index not found: {index}{hint}")
    ds = load_tiles(index, num_classes=cfg.generator.classes if cfg.dataset.source == "synthetic" else None,
                    support_fraction=cfg.dataset.support_fraction,
                    seed=derive_seed(cfg.seed, "partition"))
    return ds.with_split(split_to_map(_split(cfg, ds)))


def _split(cfg, ds):
    seed = derive_seed(cfg.seed, "meta-split")
    if cfg.dataset.split == "clustered":
        return split_meta_clustered(ds.region_ids, region_features(ds), cfg.dataset.num_clusters,
                                    seed=seed, fractions=cfg.dataset.fractions)
    return split_meta_random(ds.region_ids, cfg.dataset.fractions, seed=seed)


def build_model(cfg, ds):
    """Fresh parameters sized from the data (channels, tile size) and ``train.n``."""
    C, H, W = ds.tiles[0].pixels.shape
    seed = derive_seed(cfg.seed, "init")
    m = cfg.model
    if m.architecture == "unet":
        return build_unet(UnetConfig(C, cfg.train.n, m.levels, m.base_width, H), seed=seed)
    depth = m.depth or int(round(np.log2(H)))
    return build_cnn(CnnConfig(C, cfg.train.n, H, m.width, depth, m.batchnorm), seed=seed)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _load_ckpt(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg, out):
    if cfg.dataset.source != "synthetic":
        raise UsageError("generate needs dataset.source = synthetic")
    gen_seed = derive_seed(cfg.seed, "generator")
    ds = generate_synthetic_regions(cfg.generator, seed=gen_seed)
    target = _dataset_dir(cfg, out)
    index = write_tiles(ds, target)
    manifest = {
        "seed": cfg.seed,
        "generator_seed": gen_seed,
        "generator": asdict(cfg.generator),
        "tiles": len(ds),
        "regions": list(ds.region_ids),
        "index": index.name,
    }
    _write(target / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_train(cfg, out, mode):
    ds = load_dataset(cfg, out)
    init = build_model(cfg, ds)
    save_checkpoint(Checkpoint(init, "random", 0), _resolve(cfg, out, cfg.paths.random_checkpoint))
    if mode == "maml":
        cp = maml_train(init, ds, cfg.train)
        path = _resolve(cfg, out, cfg.paths.maml_checkpoint)
    else:
        cp = pretrain(init, ds, cfg.train)
        path = _resolve(cfg, out, cfg.paths.pretrained_checkpoint)
    save_checkpoint(cp, path)
    log.info("wrote %s", path)
    lines = ["iteration,loss"] + [f"{i},{v:.6f}" for i, v in enumerate(cp.history)]
    _write(out / f"{mode}_loss.csv", "\n".join(lines) + "\n")
    return 0


def _default_checkpoints(cfg, out):
    names = (cfg.paths.random_checkpoint, cfg.paths.pretrained_checkpoint, cfg.paths.maml_checkpoint)
    found = [_resolve(cfg, out, n) for n in names if _resolve(cfg, out, n).exists()]
    if not found:
        raise MissingInputError(f"no checkpoints given and none found in {out}")
    return found


def tuned_settings(cfg, cp, ds, shots):
    """Per-shot ``(alpha, steps)`` chosen on meta-val with the grid for this provenance."""
    ev = cfg.eval
    alphas, steps = (ev.maml_alphas, ev.maml_steps) if cp.provenance == "maml" else (ev.alphas, ev.steps)
    tuned = {}
    for s in shots:
        if s == 0:
            continue
        res = finetune_grid_search(cp.params, ds, s, alphas, steps, seed=derive_seed(cfg.seed, f"grid-{s}"),
                                   n=cfg.train.n, tasks=ev.grid_tasks, query_per_class=ev.query_per_class,
                                   meta_set=META_VAL)
        tuned[s] = (res.alpha, res.steps)
    return tuned


def cmd_evaluate(cfg, out, checkpoints):
    ds = load_dataset(cfg, out)
    paths = [Path(p) for p in checkpoints] or _default_checkpoints(cfg, out)
    cps = [(p, _load_ckpt(p)) for p in paths]
    shots = list(cfg.eval.shots)
    tasks = evaluation_tasks(ds, max(shots), cfg.train.n, cfg.eval.tasks_per_point, cfg.eval.query_per_class,
                             seed=derive_seed(cfg.seed, "eval-tasks"), meta_set=META_TEST)
    for path, cp in cps:
        tuned = tuned_settings(cfg, cp, ds, shots)
        rows = shot_curve(cp.params, ds, shots, tuned=tuned, seed=cfg.seed, n=cfg.train.n,
                          ignore=cfg.eval.ignore_classes, tasks=tasks)
        stem = path.stem
        _write(out / f"metrics_{stem}.csv", rows_to_csv(rows))
        _write(out / f"pooled_{stem}.csv", pooled_to_csv(rows))
        grid = ["shot,alpha,steps"] + [f"{s},{a:g},{n}" for s, (a, n) in sorted(tuned.items())]
        _write(out / f"tuning_{stem}.csv", "\n".join(grid) + "\n")
    return 0


def cmd_analyze(cfg, out, what, checkpoint):
    ds = load_dataset(cfg, out)
    path = Path(checkpoint) if checkpoint else _resolve(cfg, out, cfg.paths.maml_checkpoint)
    cp = _load_ckpt(path)
    an = cfg.analysis
    if what == "weight-pca":
        rows, _ = weight_adaptation_map(cp.params, ds, an.pca_tasks, an.pca_alpha,
                                        seed=derive_seed(cfg.seed, "weight-pca"), k=an.pca_shots,
                                        n=cfg.train.n, query_per_class=1, meta_set=META_TEST)
        _write(out / f"weight_pca_{path.stem}.csv", embedding_to_csv(rows))
    else:
        support, queries = sample_slice_tasks(ds, META_TEST, an.slice_shots, cfg.train.n, an.slice_query_tasks,
                                              query_per_class=cfg.eval.query_per_class,
                                              seed=derive_seed(cfg.seed, "loss-slice"))
        sl = loss_surface_1d(cp.params, support, queries, default_alphas(cp.provenance, an.slice_points))
        _write(out / f"loss_slice_{path.stem}.csv", slice_to_csv(sl))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="config file (section.key = value lines)")
    common.add_argument("--seed", type=int, help="global seed; overrides the config")
    common.add_argument("--out", type=Path, help="output directory; overrides paths.out")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="geomaml", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("generate", parents=[common], help="write a synthetic tile dataset")
    p = sub.add_parser("train", parents=[common], help="pretrain or meta-train a model")
    p.add_argument("--mode", choices=("maml", "pretrain"), required=True)
    p = sub.add_parser("evaluate", parents=[common], help="per-shot metrics for checkpoints")
    p.add_argument("checkpoints", nargs="*", help="checkpoint files (default: all found in --out)")
    p = sub.add_parser("analyze", parents=[common], help="weight-space PCA or 1-D loss slice")
    p.add_argument("analysis", choices=("weight-pca", "loss-slice"))
    p.add_argument("checkpoint", nargs="?", help="checkpoint file (default: the MAML checkpoint)")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out if args.out is not None else Path(cfg.paths.out)
    if args.out is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, out=str(args.out)))
    return cfg.validate(), out


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    # argparse cannot place optional positionals after options; collect them here
    stray = [a for a in extra if a.startswith("-")]
    if stray or (extra and args.command not in ("evaluate", "analyze")):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "evaluate":
        args.checkpoints = list(args.checkpoints) + extra
    elif args.command == "analyze" and extra:
        if args.checkpoint is not None or len(extra) > 1:
            parser.error("analyze takes a single checkpoint")
        args.checkpoint = extra[0]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out, args.mode)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.checkpoints)
        if args.command == "analyze":
            return cmd_analyze(cfg, out, args.analysis, args.checkpoint)
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    except (ConfigSyntaxError, ConfigError, GeneratorConfigError, UsageError) as exc:
        print(f"geomaml: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingInputError, FileNotFoundError, CheckpointFormatError, TileFormatError) as exc:
        print(f"geomaml: missing or unreadable input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergenceError as exc:
        print(f"geomaml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SamplingExhaustedError as exc:
        print(f"geomaml: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"geomaml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
