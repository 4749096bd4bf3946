"""Batch command line: ``myow {train, linear-eval, generate, inspect-mining, split}``.

Exit codes: 0 success, 1 mask violations found by ``inspect-mining``,
2 invalid input (config, spec, files, widths), 3 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from myow import config as config_mod
from myow.checkpoint import CheckpointError
from myow.config import ConfigError, RunConfig, with_mode
from myow.data import (DatasetFormatError, LatentManifoldSpec, ReachSpec, gen_latent_manifold,
                       gen_reach_synthetic, load_dataset, load_split, save_dataset, save_split,
                       temporal_split)
from myow.engine import ModelState, encode
from myow.miner import MiningConfigError, pair_allowed
from myow.readout import ReadoutSpec, evaluate_readout, write_metrics
from myow.tensor import Rng
from myow.training import load_model, run_training


class UsageError(Exception):
    """Bad user input; reported with exit code 2."""


# -- helpers ------------------------------------------------------------------------------

def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _load(path) -> object:
    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise UsageError(f"dataset not found: {path}") from None
    except DatasetFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _training_rows(cfg: RunConfig, ds, base: Path) -> np.ndarray:
    split = cfg.data.split_path
    if split == "all":
        return np.arange(len(ds))
    try:
        sa = load_split(_resolve(split, base), ds) if split else temporal_split(ds, cfg.data.ratios)
    except (DatasetFormatError, FileNotFoundError, ValueError) as exc:
        raise UsageError(f"split: {exc}") from None
    return sa.indices("train")


def _parse_sets(pairs: list[str], spec_cls):
    """``key=value`` overrides for a generator spec dataclass."""
    base = spec_cls()
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(spec_cls)}
    vals = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or key not in kinds:
            raise UsageError(f"unknown generator parameter {pair!r}; known: {sorted(kinds)}")
        try:
            if kinds[key] is tuple:
                vals[key] = tuple(int(v) for v in raw.split(","))
            else:
                vals[key] = kinds[key](raw)
        except ValueError:
            raise UsageError(f"bad value for {key}: {raw!r}") from None
    return replace(base, **vals)


# -- commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    try:
        cfg = config_mod.load_config(cfg_path)
        if args.mode:
            cfg = with_mode(cfg, args.mode)
        if "MYOW_SEED" in os.environ:
            cfg = replace(cfg, seed=int(os.environ["MYOW_SEED"]))
        cfg = cfg.validate()
    except FileNotFoundError:
        raise UsageError(f"config not found: {cfg_path}") from None
    except (ConfigError, MiningConfigError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    base = cfg_path.parent
    if cfg.data.path:
        ds = _load(_resolve(cfg.data.path, base))
    elif cfg.data.generator == "reach":
        ds = gen_reach_synthetic(ReachSpec(), cfg.data.generator_seed)
    else:
        raise UsageError("invalid config: set data.path or data.generator")
    rows = _training_rows(cfg, ds, base)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not (args.force or args.resume):
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    try:
        result = run_training(cfg, ds.subset(rows), out_dir=out, resume=args.resume, stop_at=args.stop_at,
                              progress=True, row_ids=rows)
    except FloatingPointError as exc:
        print(f"error: non-finite loss, run aborted: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, MiningConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    tr = result.trainer
    print(f"trained {tr.step}/{tr.total_steps} steps; outputs in {out}")
    return 0


def cmd_linear_eval(args) -> int:
    try:
        cfg, state, stats = load_model(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.checkpoint}") from None
    except (CheckpointError, ConfigError) as exc:
        raise UsageError(str(exc)) from None
    ds = _load(args.dataset)
    if ds.d != state.input_dim:
        raise UsageError(f"dataset width {ds.d} does not match the checkpoint's input width {state.input_dim}")
    task = args.task or ("multiclass" if ds.meta.get("generator") == "manifold" else "reach-angle")
    if args.test_dataset:
        test_ds = _load(args.test_dataset)
        if test_ds.d != ds.d:
            raise UsageError(f"test dataset width {test_ds.d} != {ds.d}")
        order = np.random.default_rng(args.seed).permutation(len(ds))
        n_val = max(2, len(ds) // 5)
        parts = {"train": order[n_val:], "val": order[:n_val]}
        test_set = test_ds
    else:
        if args.tag == "train" and not args.allow_train:
            raise UsageError("refusing to report on the train tag without --allow-train")
        if not args.split:
            raise UsageError("a split file (--split) or --test-dataset is required")
        try:
            sa = load_split(args.split, ds)
        except (DatasetFormatError, FileNotFoundError) as exc:
            raise UsageError(f"split: {exc}") from None
        parts = {tag: sa.indices(tag) for tag in ("train", "val")}
        test_set = ds.subset(sa.indices(args.tag))
    spec = ReadoutSpec(task=task, seed=args.seed)
    fresh = ModelState(state.input_dim, cfg.model, Rng(cfg.seed).spawn(0))
    rows = []
    for name, model in (("trained", state), ("baseline", fresh)):
        reps = encode(model, stats.apply(ds.rates))
        test_reps = encode(model, stats.apply(test_set.rates))
        try:
            res = evaluate_readout((reps[parts["train"]], ds.labels[parts["train"]]),
                                   (reps[parts["val"]], ds.labels[parts["val"]]),
                                   (test_reps, test_set.labels), spec)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rows.append((name, res))
    out = Path(args.out)
    summary = write_metrics(rows[0][1], args.seed, out)
    base = rows[1][1]
    with open(out, "a") as fh:
        for metric, val in (("baseline_accuracy", base.accuracy), ("baseline_delta_accuracy", base.delta_accuracy),
                            ("baseline_macro_f1", base.macro_f1)):
            fh.write(f"{metric},{val!r},{base.weight_decay!r},{args.seed}\n")
    print(summary)
    print(f"baseline (untrained encoder) accuracy {100 * base.accuracy:6.2f}%")
    return 0


def cmd_generate(args) -> int:
    out = Path(args.out)
    try:
        if args.generator == "reach":
            spec = _parse_sets(args.set, ReachSpec)
            save_dataset(gen_reach_synthetic(spec, args.seed), out)
            print(f"wrote {out}")
        else:
            spec = _parse_sets(args.set, LatentManifoldSpec)
            train, test = gen_latent_manifold(spec, args.seed)
            paths = (out.with_name(f"{out.stem}.train{out.suffix}"), out.with_name(f"{out.stem}.test{out.suffix}"))
            save_dataset(train, paths[0])
            save_dataset(test, paths[1])
            print(f"wrote {paths[0]} ({len(train)} rows) and {paths[1]} ({len(test)} rows)")
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid generator spec: {exc}") from None
    return 0


def read_audit(path) -> tuple[dict[str, str], np.ndarray]:
    """Header settings and ``[n, 6]`` rows (step, epoch, anchor, candidate, distance, rank)."""
    settings: dict[str, str] = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    settings[k] = v
            elif line and not line.startswith("step"):
                rows.append([float(v) for v in line.split(",")])
    return settings, np.array(rows, dtype=np.float64).reshape(-1, 6)


def mining_report(audit_path, ds) -> list[dict]:
    """Per-epoch mined-pair label agreement and mask violations."""
    settings, rows = read_audit(audit_path)
    mask = settings.get("mask", "none")
    window = float(settings.get("window_s", "1800.0"))
    ids = rows[:, 2:4].astype(np.int64)
    if len(ids) and (ids.min() < 0 or ids.max() >= len(ds)):
        raise UsageError(f"audit log references row {int(ids.max())} but the dataset has {len(ds)} rows")
    report = []
    for epoch in np.unique(rows[:, 1]).astype(int):
        sel = rows[:, 1] == epoch
        a, c = ids[sel, 0], ids[sel, 1]
        agree = float(np.mean(ds.labels[a] == ds.labels[c]))
        bad = 0
        for i, j in zip(a, c):
            tr = (None, None) if ds.trials is None else (ds.trials[i], ds.trials[j])
            if i == j or not pair_allowed(ds.timestamps[i], ds.timestamps[j], tr[0], tr[1], mask, window):
                bad += 1
        report.append({"epoch": int(epoch), "pairs": int(sel.sum()), "agreement": agree, "violations": bad})
    return report


def cmd_inspect_mining(args) -> int:
    ds = _load(args.dataset)
    try:
        report = mining_report(args.audit, ds)
    except FileNotFoundError:
        raise UsageError(f"audit log not found: {args.audit}") from None
    except (ValueError, MiningConfigError) as exc:
        raise UsageError(f"{args.audit}: {exc}") from None
    lines = ["epoch,pairs,agreement,violations"]
    lines += [f"{r['epoch']},{r['pairs']},{r['agreement']!r},{r['violations']}" for r in report]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    total = sum(r["violations"] for r in report)
    pairs = sum(r["pairs"] for r in report)
    print(f"total pairs {pairs}, mask violations {total}")
    return 1 if total else 0


def cmd_split(args) -> int:
    ds = _load(args.dataset)
    try:
        ratios = tuple(float(v) for v in args.ratios.split(","))
        sa = temporal_split(ds, ratios)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_split(sa, ds, args.out)
    counts = {t: len(sa.indices(t)) for t in ("train", "val", "test")}
    print(f"wrote {args.out}: {counts}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="myow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("config")
    t.add_argument("out", help="output directory")
    t.add_argument("--mode", choices=("myow", "byol"))
    t.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--stop-at", type=int, help="stop after this many total steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("linear-eval", help="linear readout on frozen representations")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--split", help="split file with train/val/test tags")
    e.add_argument("--tag", default="test", choices=("train", "val", "test"))
    e.add_argument("--allow-train", action="store_true")
    e.add_argument("--test-dataset", help="held-out dataset (readout fit on all of DATASET)")
    e.add_argument("--task", choices=("reach-angle", "multiclass"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="metrics.csv")
    e.set_defaults(func=cmd_linear_eval)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("generator", choices=("reach", "manifold"))
    g.add_argument("out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("inspect-mining", help="agreement and mask checks on a mining audit log")
    m.add_argument("audit")
    m.add_argument("dataset")
    m.add_argument("--out")
    m.set_defaults(func=cmd_inspect_mining)

    s = sub.add_parser("split", help="write a temporal train/val/test split")
    s.add_argument("dataset")
    s.add_argument("out")
    s.add_argument("--ratios", default="0.7,0.1,0.2")
    s.set_defaults(func=cmd_split)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
