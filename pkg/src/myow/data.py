"""Binned datasets: file I/O, temporal splits, normalization and synthetic generators.

File format (text, one sample per row)::

    #myow-dataset v1
    bin_width_s=0.1 d=3 has_trials=1
    t,trial,label,n0,n1,n2
    0.0,0,5,1.0,0.0,2.0
    ...

Extra ``key=value`` pairs on line 2 are kept in ``meta``. Floats are written
with ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from myow.tensor import Rng

MAGIC = "#myow-dataset v1"
STD_FLOOR = 1e-6
N_DIRECTIONS = 8


class DatasetFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class BinnedDataset:
    rates: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray
    bin_width: float = 0.1
    trials: np.ndarray | None = None
    meta: dict[str, str] = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.ndim != 2 or self.rates.shape[1] < 1:
            raise ValueError(f"rates must be [T, d] with d >= 1, got {self.rates.shape}")
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.trials is not None:
            self.trials = np.asarray(self.trials, dtype=np.int64)
        n = len(self.rates)
        for name in ("timestamps", "labels", "trials"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {arr.shape}")
        bad = self._first_non_monotone()
        if bad is not None:
            raise ValueError(f"timestamps not strictly increasing at row {bad}")

    def __len__(self) -> int:
        return len(self.rates)

    @property
    def d(self) -> int:
        return self.rates.shape[1]

    def _first_non_monotone(self) -> int | None:
        if len(self.timestamps) < 2:
            return None
        step = np.diff(self.timestamps) <= 0
        if self.trials is not None:
            step &= self.trials[1:] == self.trials[:-1]
        idx = np.flatnonzero(step)
        return int(idx[0]) + 1 if len(idx) else None

    def segment_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and exclusive end of the contiguous trial run containing each row."""
        n = len(self)
        if self.trials is None:
            return np.zeros(n, dtype=np.int64), np.full(n, n, dtype=np.int64)
        change = np.flatnonzero(self.trials[1:] != self.trials[:-1]) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [n]])
        run = np.repeat(np.arange(len(starts)), ends - starts)
        return starts[run], ends[run]

    def subset(self, index) -> BinnedDataset:
        index = np.asarray(index)
        return replace(self, rates=self.rates[index], timestamps=self.timestamps[index],
                       labels=self.labels[index],
                       trials=None if self.trials is None else self.trials[index],
                       meta=dict(self.meta))


# -- file I/O -------------------------------------------------------------------

def save_dataset(ds: BinnedDataset, path) -> None:
    meta = {"bin_width_s": repr(float(ds.bin_width)), "d": str(ds.d),
            "has_trials": "1" if ds.trials is not None else "0"}
    for k, v in ds.meta.items():
        meta.setdefault(k, v)
    lines = [MAGIC, " ".join(f"{k}={v}" for k, v in meta.items()),
             ",".join(["t", "trial", "label"] + [f"n{i}" for i in range(ds.d)])]
    trials = ds.trials
    for i in range(len(ds)):
        trial = str(int(trials[i])) if trials is not None else ""
        row = [repr(float(ds.timestamps[i])), trial, str(int(ds.labels[i]))]
        row.extend(repr(float(v)) for v in ds.rates[i])
        lines.append(",".join(row))
    _write_lines(path, lines)


def _write_lines(path, lines: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def load_dataset(path) -> BinnedDataset:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise DatasetFormatError(f"expected header {MAGIC!r}", 1)
    if len(text) < 3:
        raise DatasetFormatError("missing metadata or column header", len(text) + 1)
    meta = {}
    for tok in text[1].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise DatasetFormatError(f"malformed metadata token {tok!r}", 2)
        meta[key] = val
    try:
        d = int(meta.pop("d"))
        bin_width = float(meta.pop("bin_width_s"))
        has_trials = meta.pop("has_trials") == "1"
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad or missing metadata: {exc}", 2) from None
    header = text[2].split(",")
    if header != ["t", "trial", "label"] + [f"n{i}" for i in range(d)]:
        raise DatasetFormatError("column header does not match d", 3)
    n = len(text) - 3
    ts = np.empty(n)
    trials = np.empty(n, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    rates = np.empty((n, d))
    for i, line in enumerate(text[3:]):
        lineno = i + 4
        cells = line.split(",")
        if len(cells) != d + 3:
            raise DatasetFormatError(f"expected {d + 3} columns, got {len(cells)}", lineno)
        try:
            ts[i] = float(cells[0])
            if has_trials:
                trials[i] = int(cells[1])
            elif cells[1]:
                raise ValueError("trial id given but has_trials=0")
            labels[i] = int(cells[2])
            rates[i] = [float(c) for c in cells[3:]]
        except ValueError as exc:
            raise DatasetFormatError(str(exc), lineno) from None
        if i > 0 and ts[i] <= ts[i - 1] and (not has_trials or trials[i] == trials[i - 1]):
            raise DatasetFormatError("timestamps must be strictly increasing", lineno)
    return BinnedDataset(rates=rates, timestamps=ts, labels=labels, bin_width=bin_width,
                         trials=trials if has_trials else None, meta=meta)


# -- splits ---------------------------------------------------------------------

SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class SplitAssignment:
    tags: np.ndarray  # array of tag strings, one per row
    boundaries: tuple[int, int]

    def indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)


def temporal_split(ds: BinnedDataset, ratios=(0.7, 0.1, 0.2)) -> SplitAssignment:
    """Contiguous train/val/test blocks in time order.

    Without trials the block sizes are ``round(T * cumulative ratio)``; with
    trials the same arithmetic runs over whole trials so that no trial is
    split between tags.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = np.argsort(ds.timestamps, kind="stable") if ds.trials is None else np.arange(len(ds))
    if ds.trials is None:
        units = [np.array([i]) for i in order]
    else:
        start, end = ds.segment_bounds()
        firsts = np.unique(start)
        units = [np.arange(s, end[s]) for s in firsts]
        # order trials by their first timestamp
        units.sort(key=lambda u: ds.timestamps[u[0]])
    if len(units) < 3:
        raise ValueError(f"need at least 3 {'trials' if ds.trials is not None else 'samples'} to split, got {len(units)}")
    n = len(units)
    c1 = int(math.floor(n * ratios[0] + 0.5))
    c2 = int(math.floor(n * (ratios[0] + ratios[1]) + 0.5))
    c1 = min(max(c1, 1), n - 2)
    c2 = min(max(c2, c1 + 1), n - 1)
    tags = np.empty(len(ds), dtype=object)
    for j, unit in enumerate(units):
        tags[unit] = "train" if j < c1 else ("val" if j < c2 else "test")
    tags = tags.astype(str)
    return SplitAssignment(tags=tags, boundaries=(c1, c2))


def save_split(split: SplitAssignment, ds: BinnedDataset, path) -> None:
    lines = ["t,tag"] + [f"{float(t)!r},{tag}" for t, tag in zip(ds.timestamps, split.tags)]
    _write_lines(path, lines)


def load_split(path, ds: BinnedDataset) -> SplitAssignment:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "t,tag":
        raise DatasetFormatError("split file must start with 't,tag'", 1)
    rows = [line.split(",") for line in lines[1:]]
    if len(rows) != len(ds):
        raise DatasetFormatError(f"split has {len(rows)} rows, dataset has {len(ds)}")
    tags = np.array([r[1] for r in rows])
    for i, (r, t) in enumerate(zip(rows, ds.timestamps)):
        if float(r[0]) != t:
            raise DatasetFormatError("split timestamp does not match dataset", i + 2)
        if r[1] not in SPLIT_TAGS:
            raise DatasetFormatError(f"unknown tag {r[1]!r}", i + 2)
    return SplitAssignment(tags=tags, boundaries=(int((tags == "train").sum()),
                                                  int((tags != "test").sum())))


# -- normalization ----------------------------------------------------------------

def fit_norm_stats(rates: np.ndarray) -> NormStats:
    return NormStats(mean=rates.mean(axis=0), std=np.maximum(rates.std(axis=0), STD_FLOOR))


def normalize(ds: BinnedDataset, stats: NormStats) -> BinnedDataset:
    """Per-neuron z-score; refuses an already-normalized dataset."""
    if ds.normalized:
        raise ValueError("dataset is already normalized")
    out = replace(ds, rates=stats.apply(ds.rates), meta=dict(ds.meta))
    out.normalized = True
    return out


# -- synthetic reach data -----------------------------------------------------------

@dataclass(frozen=True)
class ReachSpec:
    """Synthetic center-out reaching population.

    Each trial reaches toward one of 8 directions. Neuron ``i`` fires at
    ``gain_i * (baseline + vonmises(angle - preferred_i))`` where the angle
    wobbles around the trial's direction as a within-trial AR(1) process
    (coefficient ``drift_ar``, stationary std ``angle_sd`` radians) so adjacent
    bins stay close. Rates are further scaled by a per-trial gain and a slow
    session-wide nuisance state. A fraction ``unstable_frac`` of neurons
    additionally carry an untuned per-trial burst state (on with probability
    ``unstable_p``, adding ``unstable_rate`` to the mean count). Counts are
    Poisson per bin.
    """

    n_trials: int = 160
    bins_per_trial: int = 8
    n_neurons: int = 100
    bin_width: float = 0.1
    baseline: float = 0.25
    gain: float = 2.0
    kappa: float = 2.0
    drift_ar: float = 0.9
    angle_sd: float = 0.12
    trial_gain_sd: float = 0.3
    nuisance_dim: int = 4
    nuisance_scale: float = 1.5
    nuisance_ar: float = 0.98
    unstable_frac: float = 0.2
    unstable_p: float = 0.5
    unstable_rate: float = 30.0
    inter_trial_gap: float = 1.0


def reach_tuning(spec: ReachSpec, seed: int) -> dict[str, np.ndarray]:
    """Neuron parameters of the generator (preferred direction, gain, nuisance loadings)."""
    rng = Rng(seed).spawn(1)
    return {
        "preferred": rng.uniform(0.0, 2 * np.pi, size=spec.n_neurons),
        "gain": spec.gain * rng.uniform(0.5, 1.5, size=spec.n_neurons),
        "baseline": np.full(spec.n_neurons, spec.baseline),
        "loadings": rng.normal(0.0, 1.0, size=(spec.nuisance_dim, spec.n_neurons)),
    }


def reach_rate(angle: np.ndarray, tuning: dict[str, np.ndarray], kappa: float) -> np.ndarray:
    """Expected rate per neuron for movement angles ``angle`` (before trial gain/nuisance)."""
    shape = np.exp(kappa * (np.cos(angle[:, None] - tuning["preferred"][None, :]) - 1.0))
    return tuning["gain"] * (tuning["baseline"] + shape)


def gen_reach_synthetic(spec: ReachSpec = ReachSpec(), seed: int = 0,
                        return_latents: bool = False):
    """Poisson reaching dataset with 8 balanced direction labels.

    With ``return_latents`` also returns the per-bin angle, trial gain,
    nuisance modulation and Poisson mean.
    """
    if min(spec.n_trials, spec.bins_per_trial, spec.n_neurons) <= 0:
        raise ValueError("n_trials, bins_per_trial and n_neurons must be positive")
    if not 0.0 <= spec.drift_ar < 1.0 or not 0.0 <= spec.nuisance_ar < 1.0:
        raise ValueError("drift_ar and nuisance_ar must lie in [0, 1)")
    tuning = reach_tuning(spec, seed)
    rng = Rng(seed).spawn(2)
    labels_per_trial = np.resize(np.arange(N_DIRECTIONS), spec.n_trials)
    labels_per_trial = labels_per_trial[rng.permutation(spec.n_trials)]
    T = spec.n_trials * spec.bins_per_trial
    angles = np.empty(T)
    nuisance = np.empty((T, spec.nuisance_dim))
    nz = rng.normal(0.0, 1.0, size=spec.nuisance_dim)
    trial_gain = np.exp(rng.normal(0.0, spec.trial_gain_sd, size=spec.n_trials))
    step_sd = spec.angle_sd * math.sqrt(1 - spec.drift_ar ** 2)
    nz_sd = math.sqrt(1 - spec.nuisance_ar ** 2)
    for tr in range(spec.n_trials):
        base = labels_per_trial[tr] * (2 * np.pi / N_DIRECTIONS)
        dev = rng.normal(0.0, spec.angle_sd)
        for b in range(spec.bins_per_trial):
            i = tr * spec.bins_per_trial + b
            if b > 0:
                dev = spec.drift_ar * dev + rng.normal(0.0, step_sd)
            angles[i] = base + dev
            nz = spec.nuisance_ar * nz + rng.normal(0.0, nz_sd, size=spec.nuisance_dim)
            nuisance[i] = nz
    gain_rows = np.repeat(trial_gain, spec.bins_per_trial)[:, None]
    mod = np.exp(0.5 * spec.nuisance_scale * (nuisance @ tuning["loadings"]) / math.sqrt(max(spec.nuisance_dim, 1)))
    lam = reach_rate(angles, tuning, spec.kappa) * gain_rows * mod * (spec.bin_width * 10.0)
    n_unstable = int(round(spec.unstable_frac * spec.n_neurons))
    bursts = np.zeros((spec.n_trials, spec.n_neurons))
    if n_unstable:
        units = rng.choice(spec.n_neurons, n_unstable)
        bursts[:, units] = spec.unstable_rate * rng.bernoulli(spec.unstable_p, size=(spec.n_trials, n_unstable))
    lam = lam + np.repeat(bursts, spec.bins_per_trial, axis=0)
    counts = rng.poisson(lam).astype(np.float64)
    trials = np.repeat(np.arange(spec.n_trials), spec.bins_per_trial)
    bins = np.tile(np.arange(spec.bins_per_trial), spec.n_trials)
    trial_len = spec.bins_per_trial * spec.bin_width + spec.inter_trial_gap
    ts = trials * trial_len + bins * spec.bin_width
    ds = BinnedDataset(rates=counts, timestamps=np.round(ts, 10), labels=np.repeat(labels_per_trial, spec.bins_per_trial),
                       bin_width=spec.bin_width, trials=trials, meta={"generator": "reach", "seed": str(seed)})
    if return_latents:
        return ds, {"angle": angles, "trial_gain": gain_rows[:, 0], "modulation": mod, "lambda": lam,
                    "tuning": tuning}
    return ds


# -- synthetic latent manifold ---------------------------------------------------------

@dataclass(frozen=True)
class LatentManifoldSpec:
    """Procedural latent grid observed through a fixed random smooth map.

    Factor order is (shape, orientation, scale, x, y); ``kept_orientation`` and
    ``kept_scale`` are the fractions of those factors' values that may enter
    the train set. ``rate`` is the fraction of the kept candidates that
    become the train set. Each shape carries a 2-d code that rotates with the
    orientation (radius ``shape_coupling``), so shape is not linearly
    separable from the raw observation across orientations.
    """

    cardinalities: tuple[int, ...] = (3, 24, 6, 6, 6)
    kept_orientation: float = 0.5
    kept_scale: float = 0.5
    rate: float = 0.075
    dim: int = 64
    hidden: int = 128
    noise: float = 0.02
    shape_coupling: float = 2.0
    map_seed: int = 0


MANIFOLD_FACTORS = ("shape", "orientation", "scale", "x", "y")


def latent_grid(cardinalities) -> np.ndarray:
    """All latent tuples in row-major order, ``[N, n_factors]`` ints."""
    grids = np.meshgrid(*[np.arange(c) for c in cardinalities], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def manifold_features(latents: np.ndarray, cardinalities, shape_coupling: float = 2.0) -> np.ndarray:
    """Continuous coordinates of latent tuples.

    Orientation lives on a circle; shape ``s`` is the point at angle
    ``orientation + 2 pi s / n_shapes`` on a circle of radius ``shape_coupling``.
    Scale and position are mapped to [-1, 1].
    """
    card = np.asarray(cardinalities, dtype=np.float64)
    theta = 2 * np.pi * latents[:, 1] / card[1]
    phase = theta + 2 * np.pi * latents[:, 0] / card[0]
    rest = latents[:, 2:] / np.maximum(card[2:] - 1, 1) * 2.0 - 1.0
    return np.concatenate([shape_coupling * np.cos(phase)[:, None], shape_coupling * np.sin(phase)[:, None],
                           np.cos(theta)[:, None], np.sin(theta)[:, None], rest], axis=1)


def manifold_observation(latents: np.ndarray, spec: LatentManifoldSpec) -> np.ndarray:
    """Noise-free observation map: fixed random two-layer tanh network."""
    feats = manifold_features(latents, spec.cardinalities, spec.shape_coupling)
    rng = Rng(spec.map_seed).spawn(7)
    w1 = rng.normal(0.0, 1.5, size=(feats.shape[1], spec.hidden))
    b1 = rng.normal(0.0, 0.5, size=spec.hidden)
    w2 = rng.normal(0.0, 1.0 / math.sqrt(spec.hidden), size=(spec.hidden, spec.dim))
    return np.tanh(feats @ w1 + b1) @ w2


def gen_latent_manifold(spec: LatentManifoldSpec = LatentManifoldSpec(), seed: int = 0):
    """Sparse train set on a holed latent grid, test set = everything else.

    Half (by default) of the orientation and scale values are kept; the
    train set is a fraction ``rate`` of the grid points with kept values, so
    it holds about ``kept_orientation * kept_scale * rate`` of the grid.
    The timestamp column stores the flat latent index.
    """
    card = tuple(int(c) for c in spec.cardinalities)
    if len(card) != len(MANIFOLD_FACTORS) or min(card) < 1:
        raise ValueError(f"need 5 positive factor cardinalities, got {card}")
    rng = Rng(seed).spawn(3)
    grid = latent_grid(card)
    n_or = max(1, int(round(card[1] * spec.kept_orientation)))
    n_sc = max(1, int(round(card[2] * spec.kept_scale)))
    kept_or = np.sort(rng.choice(card[1], n_or))
    kept_sc = np.sort(rng.choice(card[2], n_sc))
    cand = np.flatnonzero(np.isin(grid[:, 1], kept_or) & np.isin(grid[:, 2], kept_sc))
    n_train = int(math.floor(spec.rate * len(cand)))
    if n_train < 2:
        raise ValueError(f"rate {spec.rate} leaves {n_train} training samples")
    train_idx = np.sort(cand[rng.choice(len(cand), n_train)]) if n_train < len(cand) else cand
    test_idx = np.setdiff1d(np.arange(len(grid)), train_idx)
    clean = manifold_observation(grid, spec)
    obs = clean + rng.normal(0.0, spec.noise, size=clean.shape)

    def make(idx):
        meta = {"generator": "manifold", "seed": str(seed), "t_kind": "latent_index",
                "cardinalities": "x".join(map(str, card))}
        return BinnedDataset(rates=obs[idx].reshape(len(idx), spec.dim), timestamps=idx.astype(np.float64),
                             labels=grid[idx, 0], bin_width=1.0, trials=None, meta=meta)

    return make(train_idx), make(test_idx)


def latent_tuples(ds: BinnedDataset) -> np.ndarray:
    """Recover latent tuples of a manifold dataset from its timestamp column."""
    card = tuple(int(c) for c in ds.meta["cardinalities"].split("x"))
    flat = ds.timestamps.astype(np.int64)
    return np.stack(np.unravel_index(flat, card), axis=1)
