"""Stochastic view transforms for binned spike-count data.

Transforms operate row-wise on raw firing rates ``[n, d]``; every row gets
its own independent draws. Temporal jitter works on dataset indices rather
than values, so a transform set always applies it first.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from typing import Union

import numpy as np

from myow.tensor import Rng


@dataclass(frozen=True)
class Jitter:
    window: int = 2

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("jitter window must be >= 0")


@dataclass(frozen=True)
class Dropout:
    p_min: float = 0.0
    p_max: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.p_min <= self.p_max <= 1.0:
            raise ValueError(f"dropout needs 0 <= p_min <= p_max <= 1, got ({self.p_min}, {self.p_max})")


@dataclass(frozen=True)
class Noise:
    sigma: float = 1.5
    p: float = 0.5

    def __post_init__(self):
        if self.sigma < 0 or not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bad noise parameters sigma={self.sigma}, p={self.p}")


@dataclass(frozen=True)
class Pepper:
    c: float = 1.5
    p_act: float = 0.3
    p: float = 0.5

    def __post_init__(self):
        if self.c < 0 or not 0.0 <= self.p_act <= 1.0 or not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bad pepper parameters c={self.c}, p_act={self.p_act}, p={self.p}")


Transform = Union[Jitter, Dropout, Noise, Pepper]
_NAMES = {"jitter": Jitter, "dropout": Dropout, "noise": Noise, "pepper": Pepper}


@dataclass(frozen=True)
class TransformSpec:
    """Ordered transform list; jitter may only appear first."""

    transforms: tuple[Transform, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        for i, t in enumerate(self.transforms):
            if isinstance(t, Jitter) and i != 0:
                raise ValueError("temporal jitter is index-level and must precede value transforms")

    @property
    def jitter(self) -> Jitter | None:
        return self.transforms[0] if self.transforms and isinstance(self.transforms[0], Jitter) else None

    def to_text(self) -> str:
        if not self.transforms:
            return "none"
        parts = []
        for t in self.transforms:
            name = next(k for k, v in _NAMES.items() if isinstance(t, v))
            args = ", ".join(f"{f.name}={getattr(t, f.name)!r}" for f in fields(t))
            parts.append(f"{name}({args})")
        return " + ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> TransformSpec:
        text = text.strip()
        if text in ("", "none"):
            return cls(())
        out = []
        for part in text.split("+"):
            m = re.fullmatch(r"\s*(\w+)\s*\((.*)\)\s*", part)
            if not m or m.group(1) not in _NAMES:
                raise ValueError(f"cannot parse transform {part.strip()!r}")
            kind = _NAMES[m.group(1)]
            kwargs = {}
            for arg in filter(None, (a.strip() for a in m.group(2).split(","))):
                key, _, val = arg.partition("=")
                names = {f.name: f.type for f in fields(kind)}
                if key.strip() not in names:
                    raise ValueError(f"unknown {m.group(1)} parameter {key.strip()!r}")
                kwargs[key.strip()] = int(val) if kind is Jitter else float(val)
            out.append(kind(**kwargs))
        return cls(tuple(out))


# -- index-level --------------------------------------------------------------

def jitter_offsets(index: np.ndarray, seg_start: np.ndarray, seg_end: np.ndarray,
                   window: int, rng: Rng) -> np.ndarray:
    """Draw a nonzero offset in ``[-window, window]`` per index, kept inside its segment.

    ``seg_start``/``seg_end`` (exclusive) bound the trial or sequence that
    contains each index. An index whose segment has no other bin inside the
    window gets offset 0.
    """
    index = np.asarray(index)
    lo = np.maximum(-window, seg_start - index)
    hi = np.minimum(window, seg_end - 1 - index)
    n_opts = hi - lo + 1 - ((lo <= 0) & (hi >= 0))
    u = rng.uniform(size=index.shape)
    pick = np.floor(u * np.maximum(n_opts, 1)).astype(np.int64)
    off = lo + pick
    # skip over zero
    off = off + ((off >= 0) & (lo <= 0)).astype(np.int64)
    return np.where(n_opts > 0, off, 0)


def temporal_jitter(dataset, index, window: int, rng: Rng) -> np.ndarray:
    """Raw rows at ``index + delta`` with delta uniform over nonzero in-segment offsets."""
    index = np.asarray(index)
    start, end = dataset.segment_bounds()
    off = jitter_offsets(index, start[index], end[index], window, rng)
    return dataset.rates[index + off]


# -- value-level ----------------------------------------------------------------

def neuron_dropout(x: np.ndarray, p_min: float, p_max: float, rng: Rng) -> np.ndarray:
    """Zero each coordinate with a per-row rate drawn from U(p_min, p_max)."""
    x = np.asarray(x)
    rows = x.reshape(-1, x.shape[-1])
    p = rng.uniform(p_min, p_max, size=(rows.shape[0], 1))
    keep = rng.uniform(size=rows.shape) >= p
    return np.where(keep, rows, 0.0).reshape(x.shape)


def gaussian_noise(x: np.ndarray, sigma: float, apply_prob: float, rng: Rng) -> np.ndarray:
    x = np.asarray(x)
    rows = x.reshape(-1, x.shape[-1])
    apply = rng.uniform(size=(rows.shape[0], 1)) < apply_prob
    noise = rng.normal(0.0, sigma, size=rows.shape)
    return np.where(apply, rows + noise, rows).reshape(x.shape)


def pepper(x: np.ndarray, constant: float, p_activate: float, apply_prob: float, rng: Rng) -> np.ndarray:
    x = np.asarray(x)
    rows = x.reshape(-1, x.shape[-1])
    apply = rng.uniform(size=(rows.shape[0], 1)) < apply_prob
    bump = rng.uniform(size=rows.shape) < p_activate
    return np.where(apply & bump, rows + constant, rows).reshape(x.shape)


def apply_transform_set(spec: TransformSpec, dataset, index, rng: Rng) -> np.ndarray:
    """One view per index: jitter (if listed) then value transforms in order."""
    index = np.asarray(index)
    jit = spec.jitter
    x = temporal_jitter(dataset, index, jit.window, rng) if jit is not None else dataset.rates[index]
    for t in spec.transforms:
        if isinstance(t, Dropout):
            x = neuron_dropout(x, t.p_min, t.p_max, rng)
        elif isinstance(t, Noise):
            x = gaussian_noise(x, t.sigma, t.p, rng)
        elif isinstance(t, Pepper):
            x = pepper(x, t.c, t.p_act, t.p, rng)
    return x
