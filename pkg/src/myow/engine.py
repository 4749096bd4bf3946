"""Dual online/target networks, the two prediction losses, and the training step.

Network roles: encoder ``f``, projector ``g`` for augmented views, secondary
projector ``h`` for mined views, predictors ``q`` (augmented) and ``r``
(mined). The target side holds copies of ``f``, ``g`` and ``h`` that only
move through :func:`ema_update`.

Where ``h`` sits is the architecture variant:

* ``cascaded``: mined views use ``h(g(y))``
* ``parallel``: mined views use ``h(y)``
* ``single``: mined views reuse ``g(y)`` (``h`` is the identity)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from myow.nn import Identity, Mlp, MlpSpec, Module
from myow.tensor import Rng, Tensor, l2_normalize, no_grad, tsum

log = logging.getLogger(__name__)

VARIANTS = ("cascaded", "parallel", "single")


@dataclass(frozen=True)
class ModelConfig:
    """Widths of every network. A projector width of 0 means identity."""

    encoder_hidden: tuple[int, ...] = (64, 64, 64, 64)
    rep_size: int = 32
    projector_hidden: int = 0
    projector_size: int = 0
    projector_h_hidden: int = 0
    projector_h_size: int = 0
    predictor_hidden: int = 128
    variant: str = "cascaded"
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(w) for w in self.encoder_hidden))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def dims(self) -> tuple[int, int]:
        """Widths of the augmented-view space and the mined-view space."""
        z = self.projector_size if self.projector_hidden else self.rep_size
        h_in = {"cascaded": z, "parallel": self.rep_size, "single": z}[self.variant]
        if self.variant == "single" or not self.projector_h_hidden:
            return z, h_in
        return z, self.projector_h_size


def _mlp_or_identity(hidden: int, n_in: int, n_out: int, rng: Rng, cfg: ModelConfig) -> Module:
    if not hidden:
        return Identity()
    return Mlp(MlpSpec((n_in, hidden, n_out)), rng, bn_momentum=cfg.bn_momentum)


class Network(Module):
    """One side (online or target) of the dual architecture."""

    def __init__(self, input_dim: int, cfg: ModelConfig, rng: Rng, with_predictors: bool):
        self.cfg = cfg
        self.f = Mlp(MlpSpec((input_dim, *cfg.encoder_hidden, cfg.rep_size)), rng, bn_momentum=cfg.bn_momentum)
        z_dim, v_dim = cfg.dims()
        self.g = _mlp_or_identity(cfg.projector_hidden, cfg.rep_size, cfg.projector_size, rng, cfg)
        h_in = cfg.rep_size if cfg.variant == "parallel" else z_dim
        if cfg.variant == "single":
            self.h: Module = Identity()
        else:
            self.h = _mlp_or_identity(cfg.projector_h_hidden, h_in, cfg.projector_h_size, rng, cfg)
        self.q: Module | None = None
        self.r: Module | None = None
        if with_predictors:
            self.q = Mlp(MlpSpec((z_dim, cfg.predictor_hidden, z_dim)), rng, bn_momentum=cfg.bn_momentum)
            self.r = Mlp(MlpSpec((v_dim, cfg.predictor_hidden, v_dim)), rng, bn_momentum=cfg.bn_momentum)

    def components(self) -> dict[str, Module]:
        out = {"f": self.f, "g": self.g, "h": self.h}
        if self.q is not None:
            out.update(q=self.q, r=self.r)
        return out

    def named_parameters(self, prefix=""):
        for key, mod in self.components().items():
            yield from mod.named_parameters(f"{prefix}{key}.")

    def named_buffers(self, prefix=""):
        for key, mod in self.components().items():
            yield from mod.named_buffers(f"{prefix}{key}.")

    def project(self, y: Tensor, update_stats: bool = True) -> Tensor:
        return self.g(y, update_stats=update_stats)

    def mined_space(self, y: Tensor, update_stats: bool = True) -> Tensor:
        if self.cfg.variant == "parallel":
            return self.h(y, update_stats=update_stats)
        return self.h(self.g(y, update_stats=update_stats), update_stats=update_stats)


class ModelState:
    """Online network (with predictors) plus its target copy."""

    def __init__(self, input_dim: int, cfg: ModelConfig, rng: Rng):
        self.input_dim = input_dim
        self.cfg = cfg
        self.online = Network(input_dim, cfg, rng, with_predictors=True)
        self.target = Network(input_dim, cfg, rng, with_predictors=False)
        copy_online_to_target(self)

    def online_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.online.named_parameters())

    def target_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.target.named_parameters())

    def shared_names(self) -> list[str]:
        return list(self.target.state_arrays())

    def zero_grad(self) -> None:
        self.online.zero_grad()
        self.target.zero_grad()


def copy_online_to_target(state: ModelState) -> None:
    online = state.online.state_arrays()
    for name, arr in state.target.state_arrays().items():
        arr[...] = online[name]


def ema_update(state: ModelState, tau: float) -> None:
    """``target <- tau * target + (1 - tau) * online`` for parameters and buffers."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    online = state.online.state_arrays()
    for name, arr in state.target.state_arrays().items():
        arr[...] = tau * arr + (1.0 - tau) * online[name]


# -- losses -------------------------------------------------------------------------

def cosine_distance(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise negative cosine similarity, in [-1, 1]."""
    return -tsum(l2_normalize(u) * l2_normalize(v), axis=-1)


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def augmented_loss(state: ModelState, x, x2) -> Tensor:
    """Symmetrized augmented-view term, averaged over the batch.

    ``x`` feeds the online side and ``x2`` the target side, then the roles
    swap; the target outputs carry no gradient.
    """
    x, x2 = _as_input(x), _as_input(x2)
    if x.shape != x2.shape:
        raise ValueError(f"view batches differ in shape: {x.shape} vs {x2.shape}")
    on = state.online
    p1 = on.q(on.project(on.f(x)))
    p2 = on.q(on.project(on.f(x2)))
    with no_grad():
        t1 = state.target.project(state.target.f(x2, update_stats=False), update_stats=False)
        t2 = state.target.project(state.target.f(x, update_stats=False), update_stats=False)
    return cosine_distance(p1, t1.detach()).mean() + cosine_distance(p2, t2.detach()).mean()


def mined_term(state: ModelState, anchor_rep: Tensor, mined_target_rep: np.ndarray,
               batch_size: int, update_stats: bool = True) -> Tensor:
    """Mined-view distance summed over the given anchors and divided by ``batch_size``.

    ``anchor_rep`` is the online encoder output for the anchors (with graph);
    ``mined_target_rep`` the target encoder output of their mined views.
    With ``update_stats=False`` the online running buffers are left alone.
    """
    on = state.online
    pred = on.r(on.mined_space(anchor_rep, update_stats=update_stats), update_stats=update_stats)
    with no_grad():
        tgt = state.target.mined_space(Tensor(mined_target_rep), update_stats=False)
    return cosine_distance(pred, tgt.detach()).sum() * (1.0 / batch_size)


def mined_loss(state: ModelState, x_m, x_mined) -> Tensor:
    """Batch mean of d(r(v_m), v'_m) for anchors ``x_m`` and their mined views."""
    x_m, x_mined = _as_input(x_m), _as_input(x_mined)
    if x_m.shape != x_mined.shape:
        raise ValueError(f"anchor and mined batches differ in shape: {x_m.shape} vs {x_mined.shape}")
    y = state.online.f(x_m)
    with no_grad():
        y_t = state.target.f(x_mined, update_stats=False)
    return mined_term(state, y, y_t.data, x_m.shape[0])


def encode(state: ModelState, x, network: str = "online", train: bool = False) -> np.ndarray:
    """Encoder output ``y``; eval mode by default (running statistics)."""
    net = {"online": state.online, "target": state.target}[network]
    with no_grad():
        return net.f(_as_input(x), train=train, update_stats=False).data


@dataclass
class StepResult:
    loss_total: float
    loss_aug: float
    loss_mined: float | None
    lam: float
    tau: float
    lr: float
    n_unmined: int = 0
    audit: list[tuple[int, int, float, int]] = field(default_factory=list)
