"""kforge command line: gen-data, search, train, eval, compare.

Machine-readable results go to files under --out (and short summaries to
stdout); progress messages go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .autodiff import CheckpointError, stream
from .config import ConfigError, RunConfig, load_config, write_config
from .data import DatasetSplits, build_splits, load_splits, save_splits, synth_recordings
from .plotting import plot_comparison, plot_search_trend
from .search import (
    evaluate,
    load_model,
    random_search_baseline,
    run_search,
    save_model,
    save_search_state,
    train_from_scratch,
    write_derivation,
)
from .space import PRESETS, ArchitectureError, build_child, format_architecture, parse_architecture

log = logging.getLogger("kforge")

COMPARE_HEADER = ("model", "architecture", "accuracy")


class CommandError(Exception):
    pass


def resolve_arch(text: str, num_layers: int) -> tuple[int, ...]:
    """Token string ("0 3 1 5") or preset name M1..M6 (all layers use one choice)."""
    return parse_architecture(text, num_layers)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return replace(cfg, **overrides) if overrides else cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _cache_path(args, cfg: RunConfig) -> Path:
    return Path(args.data) if args.data else Path(cfg.out) / "dataset.kf"


def _load_cache(args, cfg: RunConfig) -> DatasetSplits:
    path = _cache_path(args, cfg)
    if not path.exists():
        raise CommandError(f"dataset cache {path} not found; run gen-data first")
    splits = load_splits(path)
    W = splits.train.window_length
    if W != cfg.window_length:
        raise CommandError(f"cache windows have length {W}, config expects {cfg.window_length}")
    return splits


def _progress(msg: str) -> None:
    log.info(msg)


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    recs = synth_recordings(cfg.windows_total, cfg.window_length, cfg.window_step,
                            cfg.noise_sigma, stream(cfg.seed, "data"))
    splits = build_splits(recs, cfg.window_length, cfg.window_step, cfg.ratios,
                          stream(cfg.seed, "split"), cfg.stratified, cfg.group_by_recording)
    path = _cache_path(args, cfg)
    try:
        save_splits(path, splits)
    except OSError as exc:
        raise CommandError(f"cannot write dataset cache {path}: {exc.strerror}") from None
    write_config(out / "config.ini", cfg)
    sizes = splits.sizes()
    print(" ".join(f"{k}={v}" for k, v in sizes.items()))
    return 0


def cmd_search(args, cfg: RunConfig) -> int:
    splits = _load_cache(args, cfg)
    out = _out_dir(cfg)
    write_config(out / "config.ini", cfg)
    structure = cfg.structure()
    result = run_search(splits, structure, cfg.search(), retrain=True, progress=_progress)
    result.metrics.write_csv(out / "metrics.csv")
    plot_search_trend(result.metrics.rows, out / "metrics.png")
    write_derivation(out / "derivation.json", result.derivation,
                     {"test_accuracy": result.scratch.test_accuracy,
                      "best_epoch": result.scratch.best_epoch})
    # the shared bank is stored with the derived architecture, so eval can score it directly
    save_model(out / "bank.kf", build_child(result.derivation.winner, result.bank))
    save_search_state(out / "controller.kf", result.controller, result.baseline)
    save_model(out / "model.kf", result.scratch.net)
    print(f"derived {format_architecture(result.derivation.winner)}")
    print(f"test_accuracy {result.scratch.test_accuracy:.4f}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    if not args.arch:
        raise CommandError("train needs --arch")
    structure = cfg.structure()
    arch = resolve_arch(args.arch, structure.num_layers)
    splits = _load_cache(args, cfg)
    out = _out_dir(cfg)
    write_config(out / "config.ini", cfg)
    res = train_from_scratch(arch, structure, splits, cfg.search())
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.kf"
    save_model(ckpt, res.net)
    train_acc = evaluate(res.net, splits.train, "eval", cfg.eval_batch_size)
    print(f"architecture {format_architecture(arch)}")
    print(f"train_accuracy {train_acc:.4f}")
    print(f"test_accuracy {res.test_accuracy:.4f}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    if not args.checkpoint:
        raise CommandError("eval needs --checkpoint")
    net = load_model(args.checkpoint)
    splits = _load_cache(args, cfg)
    data = splits[args.split]
    if data.window_length != net.structure.input_length:
        raise CommandError("checkpoint input length does not match the dataset cache")
    print(f"{evaluate(net, data, 'eval', cfg.eval_batch_size):.4f}")
    return 0


def compare_rows(splits: DatasetSplits, cfg: RunConfig, progress=None) -> list[dict]:
    """Presets M1..M6, the searched architecture and the best random-search sample,
    each retrained from scratch with the same seed and epoch budget."""
    structure = cfg.structure()
    search_cfg = cfg.search()
    rows = []
    for name, choice in PRESETS.items():
        arch = (choice,) * structure.num_layers
        acc = train_from_scratch(arch, structure, splits, search_cfg).test_accuracy
        rows.append({"model": name, "architecture": arch, "accuracy": acc})
        if progress:
            progress(f"{name} test_acc {acc:.4f}")
    result = run_search(splits, structure, search_cfg, retrain=True, progress=progress)
    rows.append({"model": "searched", "architecture": result.derivation.winner,
                 "accuracy": result.scratch.test_accuracy})
    rand = random_search_baseline(cfg.final_samples, result.bank, splits.val,
                                  stream(cfg.seed, "random-search"),
                                  eval_batch_size=cfg.eval_batch_size)
    acc = train_from_scratch(rand.winner, structure, splits, search_cfg).test_accuracy
    rows.append({"model": "random-search", "architecture": rand.winner, "accuracy": acc})
    if progress:
        progress(f"random-search test_acc {acc:.4f}")
    return rows


def format_compare_rows(rows: list[dict]) -> list[dict]:
    return [{"model": r["model"], "architecture": format_architecture(r["architecture"]),
             "accuracy": f"{100.0 * r['accuracy']:.2f}"} for r in rows]


def cmd_compare(args, cfg: RunConfig) -> int:
    splits = _load_cache(args, cfg)
    out = _out_dir(cfg)
    write_config(out / "config.ini", cfg)
    rows = format_compare_rows(compare_rows(splits, cfg, _progress))
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, COMPARE_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    plot_comparison(rows, out / "compare.png")
    sys.stdout.write((out / "compare.csv").read_text())
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "search": cmd_search, "train": cmd_train,
            "eval": cmd_eval, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--data", help="dataset cache path (default: <out>/dataset.kf)")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="kforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate and cache the synthetic dataset")
    sub.add_parser("search", parents=[common], help="run the architecture search")
    p = sub.add_parser("train", parents=[common], help="train one architecture from scratch")
    p.add_argument("--arch", required=True, help='tokens like "0 3 1 5" or a preset M1..M6')
    p.add_argument("--checkpoint", help="where to write the model (default: <out>/model.kf)")
    p = sub.add_parser("eval", parents=[common], help="evaluate a model checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    sub.add_parser("compare", parents=[common], help="presets vs searched vs random search")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (CommandError, ConfigError, CheckpointError, ArchitectureError) as exc:
        print(f"kforge {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"kforge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
