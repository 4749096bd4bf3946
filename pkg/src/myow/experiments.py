"""End-to-end protocols shared by the acceptance suite and ``scripts/``."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from myow.augment import TransformSpec
from myow.config import AugmentConfig, RunConfig, with_mode
from myow.data import BinnedDataset, LatentManifoldSpec, gen_latent_manifold, temporal_split
from myow.readout import DecodeResult, ReadoutSpec, evaluate_readout
from myow.training import run_training

ABLATION_SETS = {
    "jitter": "jitter(window=2)",
    "jitter+dropout": "jitter(window=2) + dropout(p_min=0.0, p_max=0.2)",
    "dropout+noise+pepper": "dropout(p_min=0.0, p_max=0.2) + noise(sigma=1.5, p=0.5) + pepper(c=1.5, p_act=0.3, p=0.5)",
    "all": "jitter(window=2) + dropout(p_min=0.0, p_max=0.2) + noise(sigma=1.5, p=0.5) + pepper(c=1.5, p_act=0.3, p=0.5)",
}


@dataclass
class ReachOutcome:
    result: DecodeResult
    rep_std_min: float
    final_loss: float


def representation_spread(reps: np.ndarray) -> float:
    """Smallest per-dimension std of l2-normalized representations."""
    unit = reps / np.maximum(np.linalg.norm(reps, axis=1, keepdims=True), 1e-12)
    return float(unit.std(axis=0).min())


def run_reach(cfg: RunConfig, ds: BinnedDataset, readout: ReadoutSpec = ReadoutSpec(),
              out_dir=None) -> ReachOutcome:
    """Train on the train split, decode reach direction from frozen online representations.

    With ``out_dir`` the run writes its logs there; audit ids index ``ds``.
    """
    split = temporal_split(ds, cfg.data.ratios)
    parts = {tag: split.indices(tag) for tag in ("train", "val", "test")}
    out = run_training(cfg, ds.subset(parts["train"]), out_dir=out_dir, row_ids=parts["train"])
    reps = out.trainer.encode(ds.rates)
    sets = {tag: (reps[idx], ds.labels[idx]) for tag, idx in parts.items()}
    res = evaluate_readout(sets["train"], sets["val"], sets["test"], readout)
    return ReachOutcome(result=res, rep_std_min=representation_spread(reps[parts["test"]]),
                        final_loss=out.trace[-1]["loss_total"])


def ablation_config(base: RunConfig, transforms: str, mode: str, seed: int) -> RunConfig:
    t = TransformSpec.from_text(ABLATION_SETS.get(transforms, transforms))
    return with_mode(replace(base, seed=seed, augment=AugmentConfig(T=t)), mode)


@dataclass
class ManifoldOutcome:
    test_acc: float
    train_acc: float
    result: DecodeResult


def run_manifold(cfg: RunConfig, spec: LatentManifoldSpec, data_seed: int,
                 readout: ReadoutSpec = ReadoutSpec(task="multiclass")) -> ManifoldOutcome:
    """Train on the sparse manifold sample; classify shape on held-out latent values.

    The readout is fit on the train set (20% of it held out for the weight
    decay sweep) and scored on the test set.
    """
    train, test = gen_latent_manifold(spec, data_seed)
    out = run_training(cfg, train)
    rtr = out.trainer.encode(train.rates)
    rte = out.trainer.encode(test.rates)
    order = np.random.default_rng(data_seed).permutation(len(train))
    n_val = max(2, len(train) // 5)
    val_idx, fit_idx = order[:n_val], order[n_val:]
    res = evaluate_readout((rtr[fit_idx], train.labels[fit_idx]), (rtr[val_idx], train.labels[val_idx]),
                           (rte, test.labels), readout)
    return ManifoldOutcome(test_acc=res.accuracy, train_acc=res.val_score, result=res)
