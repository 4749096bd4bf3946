"""One MYOW / BYOL iteration over a batch and a candidate batch."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from myow.augment import TransformSpec, apply_transform_set
from myow.data import BinnedDataset, NormStats
from myow.engine import ModelState, StepResult, augmented_loss, ema_update, mined_term
from myow.miner import MinerConfig, SampleMeta, build_pool, knn_select
from myow.nn import ScheduleSpec, schedule_value
from myow.tensor import Rng, Tensor, no_grad

log = logging.getLogger(__name__)


class ViewSource:
    """Raw dataset plus normalization: transforms run on raw rates, then z-score."""

    def __init__(self, ds: BinnedDataset, stats: NormStats | None):
        if ds.normalized:
            raise ValueError("views are generated from raw rates; pass the unnormalized dataset")
        self.ds = ds
        self.stats = stats

    def __len__(self) -> int:
        return len(self.ds)

    def views(self, spec: TransformSpec, index, rng: Rng) -> np.ndarray:
        x = apply_transform_set(spec, self.ds, index, rng)
        return self.stats.apply(x) if self.stats is not None else x

    def meta(self, index) -> SampleMeta:
        index = np.asarray(index)
        trials = None if self.ds.trials is None else self.ds.trials[index]
        return SampleMeta(index=index, timestamps=self.ds.timestamps[index], trials=trials)


@dataclass(frozen=True)
class Schedules:
    lr: ScheduleSpec
    tau: ScheduleSpec
    lam: ScheduleSpec

    def at(self, step: int) -> tuple[float, float, float]:
        return (schedule_value(self.lr, step), schedule_value(self.tau, step), schedule_value(self.lam, step))


@dataclass(frozen=True)
class StepConfig:
    mode: str
    transform: TransformSpec
    transform_mined: TransformSpec
    miner: MinerConfig


def myow_step(state: ModelState, optimizer, source: ViewSource, batch_idx: np.ndarray,
              cand_idx: np.ndarray | None, rng_aug: Rng, rng_mine: Rng, step: int,
              schedules: Schedules, cfg: StepConfig) -> StepResult:
    """Augment, mine, accumulate both loss terms, update online, then EMA the target.

    In ``byol`` mode the mining branch is skipped entirely. Anchors with no
    valid candidate contribute nothing to the mined term and are counted in
    ``n_unmined``.
    """
    lr, tau, lam = schedules.at(step)
    B = len(batch_idx)
    state.zero_grad()

    x = source.views(cfg.transform, batch_idx, rng_aug)
    x2 = source.views(cfg.transform, batch_idx, rng_aug)
    loss_aug = augmented_loss(state, x, x2)
    total = loss_aug
    loss_mined = None
    n_unmined = 0
    audit = []

    if cfg.mode == "myow":
        cand_views = source.views(cfg.transform_mined, cand_idx, rng_mine)
        pool = build_pool(cand_views, source.meta(cand_idx), state, cfg.miner,
                          anchor_meta=source.meta(batch_idx))
        x_m = source.views(cfg.transform_mined, batch_idx, rng_mine)
        # batch statistics without touching running buffers, so lam = 0 leaves the state as in byol
        y_m = state.online.f(Tensor(x_m), update_stats=False)
        sel = knn_select(y_m.data, pool, cfg.miner, rng_mine)
        ok = np.flatnonzero(sel.ok)
        n_unmined = B - len(ok)
        if len(ok) >= 2:
            chosen = sel.chosen[ok]
            if cfg.miner.space == "target":
                mined_rep = pool.embeddings[chosen]
            else:
                with no_grad():
                    mined_rep = state.target.f(Tensor(pool.views[chosen]), update_stats=False).data
            anchors = y_m if len(ok) == B else y_m[ok]
            # a zero-weight term must leave every buffer as byol would
            term = mined_term(state, anchors, mined_rep, B, update_stats=lam > 0)
            loss_mined = term.item()
            total = total + lam * term
            audit = [(int(batch_idx[i]), int(cand_idx[c]), float(sel.distance[i]), int(sel.rank[i]))
                     for i, c in zip(ok, chosen)]
        else:
            n_unmined = B
            loss_mined = 0.0
        if n_unmined:
            log.warning("step %d: %d anchors had no valid mining candidate", step, n_unmined)

    if not np.isfinite(total.item()):
        raise FloatingPointError(f"non-finite loss at step {step}: aug={loss_aug.item()} mined={loss_mined}")
    total.backward()
    optimizer.lr = lr
    optimizer.step(state.online_parameters())
    ema_update(state, tau)
    return StepResult(loss_total=total.item(), loss_aug=loss_aug.item(), loss_mined=loss_mined,
                      lam=lam, tau=tau, lr=lr, n_unmined=n_unmined, audit=audit)
