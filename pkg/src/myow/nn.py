"""Layers, MLP builder, optimizers and schedules on top of :mod:`myow.tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from myow.tensor import Rng, Tensor, batch_norm, linear, relu


class Module:
    """Minimal container: named parameters (trainable) and buffers (not)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return iter(())

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every parameter and buffer array by name (views, not copies)."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state_arrays()
        missing = set(own) - set(arrays)
        if missing:
            raise KeyError(f"missing arrays: {sorted(missing)}")
        for name, arr in own.items():
            if arr.shape != arrays[name].shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {arr.shape}")
            arr[...] = arrays[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        return self.forward(x, train=train, update_stats=update_stats)

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        raise NotImplementedError


class Identity(Module):
    def forward(self, x, train=True, update_stats=True):
        return x


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Rng | None = None, dtype=np.float64):
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in)) if rng is not None else np.zeros((n_out, n_in))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def named_parameters(self, prefix=""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def forward(self, x, train=True, update_stats=True):
        return linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    """Batch normalization with exponential running statistics.

    Running variance uses the unbiased batch variance, the usual convention.
    ``update_stats=False`` normalizes with batch statistics but leaves the
    running buffers untouched (the target network's buffers are EMA-driven).
    """

    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(n, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(n, dtype=dtype)
        self.running_var = np.ones(n, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def named_parameters(self, prefix=""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix=""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def forward(self, x, train=True, update_stats=True):
        return batchnorm_forward(x, self, train=train, update_stats=update_stats)


def batchnorm_forward(x: Tensor, bn: BatchNorm1d, train: bool = True, update_stats: bool = True) -> Tensor:
    if not train:
        out, _, _ = batch_norm(x, bn.gamma, bn.beta, bn.eps, stats=(bn.running_mean, bn.running_var))
        return out
    n = x.shape[0]
    if n < 2:
        raise ValueError("batch normalization in train mode needs at least 2 samples")
    out, mu, var = batch_norm(x, bn.gamma, bn.beta, bn.eps)
    if update_stats:
        m = bn.momentum
        bn.running_mean[...] = (1 - m) * bn.running_mean + m * mu
        bn.running_var[...] = (1 - m) * bn.running_var + m * var * (n / (n - 1))
    return out


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[in, hidden..., out]``.

    Every hidden block is linear -> batchnorm -> ReLU; the last layer is a
    plain linear unless ``final_activation`` is set.
    """

    widths: tuple[int, ...]
    batchnorm: bool = True
    final_activation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive: {self.widths}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def parameter_count(self) -> int:
        total = 0
        n_layers = len(self.widths) - 1
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            total += a * b + b
            last = i == n_layers - 1
            if self.batchnorm and (not last or self.final_activation):
                total += 2 * b
        return total


class Mlp(Module):
    def __init__(self, spec: MlpSpec, rng: Rng, bn_momentum: float = 0.1, dtype=np.float64):
        self.spec = spec
        self.layers: list[Module] = []
        n_layers = len(spec.widths) - 1
        for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            self.layers.append(Linear(a, b, rng, dtype=dtype))
            last = i == n_layers - 1
            if not last or spec.final_activation:
                if spec.batchnorm:
                    self.layers.append(BatchNorm1d(b, momentum=bn_momentum, dtype=dtype))
                self.layers.append(_Relu())

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def named_buffers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_buffers(f"{prefix}{i}.")

    def forward(self, x, train=True, update_stats=True):
        if x.ndim != 2 or x.shape[1] != self.spec.n_in:
            raise ValueError(f"MLP expects width {self.spec.n_in}, got input shape {x.shape}")
        for layer in self.layers:
            x = layer(x, train=train, update_stats=update_stats)
        return x

    def to_spec(self) -> MlpSpec:
        linears = [layer for layer in self.layers if isinstance(layer, Linear)]
        widths = [linears[0].weight.shape[1]] + [layer.weight.shape[0] for layer in linears]
        has_bn = any(isinstance(layer, BatchNorm1d) for layer in self.layers)
        final_act = isinstance(self.layers[-1], _Relu)
        # a single plain linear layer carries no evidence either way
        batchnorm = has_bn if (len(linears) > 1 or final_act) else self.spec.batchnorm
        return MlpSpec(tuple(widths), batchnorm=batchnorm, final_activation=final_act)


class _Relu(Module):
    def forward(self, x, train=True, update_stats=True):
        return relu(x)


def mlp_forward(mlp: Mlp, x: Tensor, mode: str = "train") -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    return mlp(x, train=mode == "train")


# -- optimizers -----------------------------------------------------------------

def _check_finite(named_grads: list[tuple[str, np.ndarray]]) -> None:
    bad = [name for name, g in named_grads if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradients in: {', '.join(bad)}")


@dataclass
class AdamW:
    """AdamW with decoupled weight decay (decay applied before the moment step)."""

    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    kind = "adamw"

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        grads = [(n, p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in named_params]
        _check_finite(grads)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for (name, p), (_, g) in zip(named_params, grads):
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def buffers(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    def load_buffers(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.m = {k[2:]: a.copy() for k, a in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: a.copy() for k, a in arrays.items() if k.startswith("v/")}
        self.step_count = step_count


@dataclass
class SgdMomentum:
    """Classical momentum SGD with weight decay added to the gradient."""

    lr: float = 0.03
    weight_decay: float = 0.0
    momentum: float = 0.9
    step_count: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    kind = "sgd"

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        grads = [(n, p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in named_params]
        _check_finite(grads)
        self.step_count += 1
        for (name, p), (_, g) in zip(named_params, grads):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf = self.velocity.get(name)
            if buf is None:
                buf = self.velocity[name] = np.zeros_like(p.data)
            buf[...] = self.momentum * buf + g
            p.data -= self.lr * buf

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"velocity/{k}": a for k, a in self.velocity.items()}

    def load_buffers(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.velocity = {k[len("velocity/"):]: a.copy() for k, a in arrays.items()}
        self.step_count = step_count


def adamw_step(state: AdamW, named_params: list[tuple[str, Tensor]]) -> None:
    state.step(named_params)


def sgd_momentum_step(state: SgdMomentum, named_params: list[tuple[str, Tensor]]) -> None:
    state.step(named_params)


# -- schedules --------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleSpec:
    """Linear warmup from ``warmup_start`` to ``base``, then ``shape`` to ``final``.

    ``shape='cosine'`` is a half-cosine from base to final over the
    remaining steps; ``shape='constant'`` holds base.
    """

    base: float
    final: float | None = None
    warmup_steps: int = 0
    total_steps: int = 1
    shape: str = "cosine"
    warmup_start: float = 0.0

    def __post_init__(self):
        if self.shape not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule shape {self.shape!r}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"need 0 <= warmup ({self.warmup_steps}) <= total ({self.total_steps})")


def schedule_value(spec: ScheduleSpec, step: int) -> float:
    if not 0 <= step <= spec.total_steps:
        raise ValueError(f"step {step} outside [0, {spec.total_steps}]")
    final = spec.base if spec.final is None else spec.final
    w = spec.warmup_steps
    if step < w:
        frac = step / w
        return spec.warmup_start * (1.0 - frac) + spec.base * frac
    if spec.shape == "constant" or spec.total_steps == w:
        return spec.base
    # weights sum to 1 and hit (1, 0) exactly at the endpoints
    mix = 0.5 * (1.0 + math.cos(math.pi * (step - w) / (spec.total_steps - w)))
    return spec.base * mix + final * (1.0 - mix)
