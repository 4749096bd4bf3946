"""Candidate pools and randomized k-nearest-neighbor view mining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from myow.tensor import Rng, Tensor, no_grad

MASKS = ("none", "exclude-same-trial", "exclude-time-window")
SPACES = ("target", "online")
METRICS = ("euclidean", "cosine")


class MiningConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MinerConfig:
    k: int = 5
    pool_size: int = 1024
    space: str = "target"
    mask: str = "none"
    window_s: float = 1800.0
    metric: str = "euclidean"

    def __post_init__(self):
        if not 1 <= self.k <= self.pool_size:
            raise MiningConfigError(f"need 1 <= k <= pool_size, got k={self.k}, L={self.pool_size}")
        if self.space not in SPACES:
            raise MiningConfigError(f"space must be one of {SPACES}")
        if self.mask not in MASKS:
            raise MiningConfigError(f"mask must be one of {MASKS}")
        if self.metric not in METRICS:
            raise MiningConfigError(f"metric must be one of {METRICS}")
        if self.window_s < 0:
            raise MiningConfigError("window_s must be >= 0")


@dataclass(frozen=True)
class SampleMeta:
    """Per-sample metadata used by mask predicates."""

    index: np.ndarray
    timestamps: np.ndarray
    trials: np.ndarray | None = None

    def take(self, rows) -> SampleMeta:
        return SampleMeta(self.index[rows], self.timestamps[rows],
                          None if self.trials is None else self.trials[rows])


@dataclass
class CandidatePool:
    views: np.ndarray        # [L, d] transformed candidate inputs
    embeddings: np.ndarray   # [L, rep]
    meta: SampleMeta
    valid: np.ndarray | None = None  # [B, L], filled once anchors are known


def temporal_mask(anchor: SampleMeta, cand: SampleMeta, predicate: str, window_s: float = 1800.0) -> np.ndarray:
    """``[B, L]`` boolean: may candidate j serve as a mined view for anchor i.

    The anchor's own sample is always excluded.
    """
    valid = anchor.index[:, None] != cand.index[None, :]
    if predicate == "none":
        return valid
    if predicate == "exclude-same-trial":
        if anchor.trials is None or cand.trials is None:
            raise MiningConfigError("exclude-same-trial needs trial ids")
        return valid & (anchor.trials[:, None] != cand.trials[None, :])
    if predicate == "exclude-time-window":
        gap = np.abs(anchor.timestamps[:, None] - cand.timestamps[None, :])
        return valid & (gap >= window_s)
    raise MiningConfigError(f"unknown mask predicate {predicate!r}")


def pair_allowed(anchor_t: float, cand_t: float, anchor_trial, cand_trial, predicate: str,
                 window_s: float = 1800.0) -> bool:
    """Scalar form of the predicate (without the self-exclusion)."""
    if predicate == "none":
        return True
    if predicate == "exclude-same-trial":
        if anchor_trial is None or cand_trial is None:
            raise MiningConfigError("exclude-same-trial needs trial ids")
        return anchor_trial != cand_trial
    if predicate == "exclude-time-window":
        return abs(anchor_t - cand_t) >= window_s
    raise MiningConfigError(f"unknown mask predicate {predicate!r}")


def embed_candidates(state, views: np.ndarray, space: str) -> np.ndarray:
    """Encoder outputs of candidate views (train-mode batch statistics, no grad)."""
    net = state.target if space == "target" else state.online
    with no_grad():
        return net.f(Tensor(views), update_stats=False).data


def build_pool(views: np.ndarray, meta: SampleMeta, state, cfg: MinerConfig,
               anchor_meta: SampleMeta | None = None) -> CandidatePool:
    """Embed transformed candidates in the configured space and mask them per anchor."""
    if len(views) == 0:
        raise ValueError("candidate pool is empty")
    emb = embed_candidates(state, views, cfg.space)
    pool = CandidatePool(views=views, embeddings=emb, meta=meta)
    if anchor_meta is not None:
        pool.valid = temporal_mask(anchor_meta, meta, cfg.mask, cfg.window_s)
    return pool


def pairwise_distances(anchors: np.ndarray, cands: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    if metric == "cosine":
        a = anchors / np.maximum(np.linalg.norm(anchors, axis=1, keepdims=True), 1e-12)
        c = cands / np.maximum(np.linalg.norm(cands, axis=1, keepdims=True), 1e-12)
        return 1.0 - a @ c.T
    sq = (anchors * anchors).sum(axis=1)[:, None] + (cands * cands).sum(axis=1)[None, :] - 2.0 * anchors @ cands.T
    return np.maximum(sq, 0.0)


@dataclass
class Selection:
    chosen: np.ndarray     # [B] pool column, -1 where the anchor had no valid candidate
    distance: np.ndarray   # [B] distance to the chosen candidate (nan if none)
    rank: np.ndarray       # [B] neighbor rank of the chosen candidate (0 = nearest)
    neighbors: list[np.ndarray]

    @property
    def ok(self) -> np.ndarray:
        return self.chosen >= 0


def knn_select(anchor_emb: np.ndarray, pool: CandidatePool, cfg: MinerConfig, rng: Rng) -> Selection:
    """Pick one of the k nearest valid candidates uniformly at random per anchor.

    Ties are broken toward the lower candidate index. When fewer than ``k``
    candidates are valid, all of them form the neighbor set. One uniform
    draw is consumed per anchor, in anchor order, whether or not it is used.
    """
    B = len(anchor_emb)
    dist = pairwise_distances(anchor_emb, pool.embeddings, cfg.metric)
    valid = pool.valid if pool.valid is not None else np.ones(dist.shape, dtype=bool)
    masked = np.where(valid, dist, np.inf)
    order = np.argsort(masked, axis=1, kind="stable")
    n_valid = valid.sum(axis=1)
    k_eff = np.minimum(cfg.k, n_valid)
    u = rng.uniform(size=B)
    rank = np.minimum(np.floor(u * k_eff).astype(np.int64), np.maximum(k_eff - 1, 0))
    rows = np.arange(B)
    chosen = np.where(k_eff > 0, order[rows, rank], -1)
    distance = np.where(k_eff > 0, dist[rows, np.maximum(chosen, 0)], np.nan)
    neighbors = [order[i, :k_eff[i]] for i in range(B)]
    return Selection(chosen=chosen, distance=distance, rank=np.where(k_eff > 0, rank, -1), neighbors=neighbors)
