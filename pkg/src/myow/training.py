"""Training loop: data loaders, schedules, logs, audit trail and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from myow import config as config_mod
from myow.checkpoint import load_checkpoint, save_checkpoint
from myow.config import RunConfig
from myow.data import BinnedDataset, NormStats, fit_norm_stats
from myow.engine import ModelState, encode
from myow.nn import AdamW, ScheduleSpec, SgdMomentum
from myow.step import Schedules, StepConfig, ViewSource, myow_step
from myow.tensor import Rng

log = logging.getLogger(__name__)

RNG_STREAMS = ("data", "cand", "aug", "mine")


class BatchLoader:
    """Reshuffled passes split into ``ceil(N / B)`` near-equal batches."""

    def __init__(self, n: int, batch_size: int, rng: Rng):
        self.n = n
        self.n_iter = max(1, math.ceil(n / batch_size))
        self.rng = rng
        self.epoch = -1
        self.perm = np.arange(n)

    def batch(self, step: int) -> np.ndarray:
        epoch, j = divmod(step, self.n_iter)
        while self.epoch < epoch:
            self.perm = self.rng.permutation(self.n)
            self.epoch += 1
        return np.array_split(self.perm, self.n_iter)[j]


class CandidateLoader:
    """Independent shuffled stream of candidate indices, reset whenever exhausted."""

    def __init__(self, n: int, rng: Rng):
        self.n = n
        self.rng = rng
        self.perm = np.arange(0)
        self.cursor = 0

    def next(self, size: int) -> np.ndarray:
        out = []
        need = size
        while need:
            if self.cursor >= len(self.perm):
                self.perm = self.rng.permutation(self.n)
                self.cursor = 0
            take = self.perm[self.cursor:self.cursor + need]
            self.cursor += len(take)
            need -= len(take)
            out.append(take)
        return np.concatenate(out)


def build_schedules(cfg: RunConfig, iters_per_epoch: int) -> Schedules:
    total = cfg.train.epochs * iters_per_epoch
    lr = ScheduleSpec(base=cfg.optim.lr, final=cfg.optim.final_lr,
                      warmup_steps=min(cfg.optim.warmup_epochs * iters_per_epoch, total),
                      total_steps=total, shape=cfg.optim.schedule)
    tau = ScheduleSpec(base=cfg.ema.tau_base, final=cfg.ema.tau_final, total_steps=total, shape=cfg.ema.schedule)
    lam = ScheduleSpec(base=cfg.mining.lam, final=cfg.mining.lam,
                       warmup_steps=min(cfg.mining.lam_warmup_epochs * iters_per_epoch, total),
                       total_steps=total, shape="constant")
    return Schedules(lr=lr, tau=tau, lam=lam)


def make_optimizer(cfg: RunConfig):
    if cfg.optim.kind == "adamw":
        return AdamW(lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    return SgdMomentum(lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay, momentum=cfg.optim.momentum)


class Trainer:
    """Owns model, optimizer, RNG streams and loaders for one run."""

    def __init__(self, cfg: RunConfig, train_ds: BinnedDataset, stats: NormStats | None = None):
        self.cfg = cfg.validate()
        self.stats = stats if stats is not None else fit_norm_stats(train_ds.rates)
        self.source = ViewSource(train_ds, self.stats)
        root = Rng(cfg.seed)
        self.state = ModelState(train_ds.d, cfg.model, root.spawn(0))
        self.rngs = {name: root.spawn(i + 1) for i, name in enumerate(RNG_STREAMS)}
        self.optimizer = make_optimizer(cfg)
        self.loader = BatchLoader(len(train_ds), cfg.train.batch_size, self.rngs["data"])
        self.candidates = CandidateLoader(len(train_ds), self.rngs["cand"])
        self.iters_per_epoch = self.loader.n_iter
        self.total_steps = cfg.train.epochs * self.iters_per_epoch
        self.schedules = build_schedules(cfg, self.iters_per_epoch)
        self.step_cfg = StepConfig(mode=cfg.mode, transform=cfg.augment.T,
                                   transform_mined=cfg.augment.mined, miner=cfg.miner)
        self.step = 0
        self.unmined_total = 0

    def train_step(self):
        idx = self.loader.batch(self.step)
        cand = self.candidates.next(self.cfg.miner.pool_size) if self.cfg.mode == "myow" else None
        res = myow_step(self.state, self.optimizer, self.source, idx, cand, self.rngs["aug"],
                        self.rngs["mine"], self.step, self.schedules, self.step_cfg)
        self.unmined_total += res.n_unmined
        self.step += 1
        return res

    def encode(self, rates: np.ndarray, network: str = "online") -> np.ndarray:
        """Eval-mode representations of raw rates (normalized with training statistics)."""
        return encode(self.state, self.stats.apply(rates), network)

    # -- checkpoint state -----------------------------------------------------------
    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"online/{k}": v for k, v in self.state.online.state_arrays().items()}
        out.update({f"target/{k}": v for k, v in self.state.target.state_arrays().items()})
        out.update({f"optim/{k}": v for k, v in self.optimizer.buffers().items()})
        out["norm/mean"] = self.stats.mean
        out["norm/std"] = self.stats.std
        out["loader/perm"] = self.loader.perm
        out["cand/perm"] = self.candidates.perm
        return out

    def meta(self) -> dict:
        return {"step": self.step, "input_dim": self.state.input_dim,
                "rng": {k: r.state() for k, r in self.rngs.items()}, "rng_algorithm": Rng.algorithm,
                "optim_kind": self.optimizer.kind, "optim_steps": self.optimizer.step_count,
                "loader_epoch": self.loader.epoch, "cand_cursor": self.candidates.cursor,
                "unmined_total": self.unmined_total}

    def save(self, path) -> None:
        save_checkpoint(path, config_mod.to_text(self.cfg), self.arrays(), self.meta())

    @classmethod
    def from_checkpoint(cls, path, train_ds: BinnedDataset) -> Trainer:
        text, arrays, meta = load_checkpoint(path)
        cfg = config_mod.from_text(text)
        stats = NormStats(arrays["norm/mean"], arrays["norm/std"])
        tr = cls(cfg, train_ds, stats)
        tr.load_state(arrays, meta)
        return tr

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        if meta["input_dim"] != self.state.input_dim:
            raise ValueError(f"checkpoint input width {meta['input_dim']} != dataset width {self.state.input_dim}")
        self.state.online.load_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("online/")})
        self.state.target.load_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("target/")})
        self.optimizer.load_buffers({k[6:]: v for k, v in arrays.items() if k.startswith("optim/")},
                                    meta["optim_steps"])
        for name, text in meta["rng"].items():
            self.rngs[name].set_state(text)
        self.loader.perm = arrays["loader/perm"]
        self.loader.epoch = meta["loader_epoch"]
        self.candidates.perm = arrays["cand/perm"]
        self.candidates.cursor = meta["cand_cursor"]
        self.step = meta["step"]
        self.unmined_total = meta["unmined_total"]


def load_model(path) -> tuple[RunConfig, ModelState, NormStats]:
    """Model and normalization from a checkpoint, for evaluation."""
    text, arrays, meta = load_checkpoint(path)
    cfg = config_mod.from_text(text)
    state = ModelState(meta["input_dim"], cfg.model, Rng(cfg.seed).spawn(0))
    state.online.load_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("online/")})
    state.target.load_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("target/")})
    return cfg, state, NormStats(arrays["norm/mean"], arrays["norm/std"])


# -- run driver with logs ---------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class RunOutput:
    trainer: Trainer
    trace: list[dict]


def trace_columns(mode: str) -> list[str]:
    cols = ["step", "epoch", "loss_total", "loss_aug"]
    if mode == "myow":
        cols += ["loss_mined", "lam", "unmined"]
    return cols + ["tau", "lr"]


def epoch_columns(mode: str) -> list[str]:
    cols = ["epoch", "loss_total", "loss_aug"]
    if mode == "myow":
        cols += ["loss_mined", "lam", "unmined"]
    return cols + ["tau", "lr"]


def run_training(cfg: RunConfig, train_ds: BinnedDataset, out_dir=None, resume=None,
                 stop_at: int | None = None, progress: bool = False, row_ids=None) -> RunOutput:
    """Train to completion (or ``stop_at`` steps), logging to ``out_dir`` if given.

    Files: ``trace.csv`` (per step), ``metrics.csv`` (per epoch),
    ``mining_audit.csv`` (myow only), ``config.txt``, ``checkpoint_final.ckpt``
    and ``checkpoint_epoch{N}.ckpt`` every ``train.checkpoint_every`` epochs.
    On resume, log rows past the checkpoint step are dropped before appending.
    ``row_ids`` maps training rows to the ids written in the audit log
    (default: the row positions themselves).
    """
    trainer = Trainer.from_checkpoint(resume, train_ds) if resume else Trainer(cfg, train_ds)
    cfg = trainer.cfg
    out = Path(out_dir) if out_dir is not None else None
    files = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config_mod.to_text(cfg))
        files = _open_logs(out, cfg, trainer.step, trainer.iters_per_epoch)
    ids = np.arange(len(train_ds)) if row_ids is None else np.asarray(row_ids)
    trace: list[dict] = []
    end = trainer.total_steps if stop_at is None else min(stop_at, trainer.total_steps)
    epoch_rows: list[dict] = []
    if out is not None and trainer.step % trainer.iters_per_epoch:
        # resuming mid-epoch: the epoch average also covers the steps logged before the checkpoint
        epoch_rows = _read_trace(out / "trace.csv", trainer.step // trainer.iters_per_epoch)
    try:
        while trainer.step < end:
            step = trainer.step
            epoch = step // trainer.iters_per_epoch
            res = trainer.train_step()
            row = {"step": step, "epoch": epoch, "loss_total": res.loss_total, "loss_aug": res.loss_aug,
                   "loss_mined": res.loss_mined, "lam": res.lam, "tau": res.tau, "lr": res.lr,
                   "unmined": res.n_unmined}
            trace.append(row)
            epoch_rows.append(row)
            if files:
                files["trace"].writerow([row[c] if c in ("step", "epoch", "unmined") else _fmt(row[c])
                                         for c in trace_columns(cfg.mode)])
                if cfg.mode == "myow":
                    for a, c, dist, rank in res.audit:
                        files["audit"].writerow([step, epoch, int(ids[a]), int(ids[c]), repr(dist), rank])
            if trainer.step % trainer.iters_per_epoch == 0:
                if files:
                    _write_epoch(files["metrics"], cfg.mode, epoch, epoch_rows)
                    every = cfg.train.checkpoint_every
                    if every and (epoch + 1) % every == 0:
                        trainer.save(out / f"checkpoint_epoch{epoch + 1}.ckpt")
                epoch_rows = []
            if progress and trainer.step % trainer.iters_per_epoch == 0:
                log.info("epoch %d loss %.4f", epoch, res.loss_total)
    finally:
        for fh in files.get("_handles", []):
            fh.close()
    if out is not None:
        name = "checkpoint_final.ckpt" if trainer.step >= trainer.total_steps else f"checkpoint_step{trainer.step}.ckpt"
        trainer.save(out / name)
    return RunOutput(trainer=trainer, trace=trace)


def _read_trace(path: Path, epoch: int) -> list[dict]:
    rows = []
    with open(path) as fh:
        for rec in csv.DictReader(fh):
            if int(rec["epoch"]) != epoch:
                continue
            row = {k: (None if v == "" else float(v)) for k, v in rec.items()}
            row.setdefault("loss_mined", None)
            row["unmined"] = int(rec.get("unmined") or 0)
            rows.append(row)
    return rows


def _truncate_csv(path: Path, keep) -> None:
    if not path.exists():
        return
    lines = path.read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("#") or ln.startswith("step") or ln.startswith("epoch,")]
    body = [ln for ln in lines if ln not in head and keep(ln)]
    path.write_text("\n".join(head + body) + ("\n" if head or body else ""))


def _open_logs(out: Path, cfg: RunConfig, start_step: int, ipe: int) -> dict:
    paths = {"trace": out / "trace.csv", "metrics": out / "metrics.csv"}
    if cfg.mode == "myow":
        paths["audit"] = out / "mining_audit.csv"
    if start_step:
        start_epoch = start_step // ipe
        _truncate_csv(paths["trace"], lambda ln: int(ln.split(",")[0]) < start_step)
        _truncate_csv(paths["metrics"], lambda ln: int(ln.split(",")[0]) < start_epoch)
        if "audit" in paths:
            _truncate_csv(paths["audit"], lambda ln: int(ln.split(",")[0]) < start_step)
    else:
        for p in paths.values():
            if p.exists():
                p.unlink()
    files: dict = {"_handles": []}
    headers = {"trace": trace_columns(cfg.mode), "metrics": epoch_columns(cfg.mode),
               "audit": ["step", "epoch", "anchor", "candidate", "distance", "rank"]}
    for key, p in paths.items():
        new = not p.exists()
        fh = open(p, "a", newline="")
        files["_handles"].append(fh)
        w = csv.writer(fh, lineterminator="\n")
        if new:
            if key == "audit":
                fh.write(f"# mask={cfg.miner.mask} window_s={cfg.miner.window_s!r} k={cfg.miner.k}\n")
            w.writerow(headers[key])
        files[key] = w
    return files


def _write_epoch(writer, mode: str, epoch: int, rows: list[dict]) -> None:
    def avg(key):
        vals = [r[key] for r in rows if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    last = rows[-1]
    out = {"epoch": epoch, "loss_total": avg("loss_total"), "loss_aug": avg("loss_aug"),
           "loss_mined": avg("loss_mined"), "lam": last["lam"], "unmined": sum(r["unmined"] for r in rows),
           "tau": last["tau"], "lr": last["lr"]}
    writer.writerow([out[c] if c in ("epoch", "unmined") else _fmt(out[c]) for c in epoch_columns(mode)])
