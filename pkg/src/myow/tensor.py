"""Dense tensors with define-by-run reverse-mode autodiff, plus a pinned RNG.

Values live in numpy arrays (float64 by default). Every differentiable op
records its parents and a closure that maps the output gradient to parent
gradients; :meth:`Tensor.backward` walks the graph in reverse topological
order and accumulates into leaves that have ``requires_grad=True``.
"""

from __future__ import annotations

import contextlib
import json
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
NORM_EPS = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE))
        if arr.ndim > 0 and 0 in arr.shape:
            raise ValueError(f"tensor shape must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- construction helpers ------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = parents if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff -------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``.grad``.

        Only scalar tensors may be differentiated without an explicit seed.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def relu(self):
        return relu(self)

    @property
    def T(self):
        return transpose(self)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._make(a.data * b.data, (a, b),
                        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return Tensor._make(out, (a, b),
                        lambda g: (_unbroadcast(g / b.data, a.shape),
                                   _unbroadcast(-g * out / b.data, b.shape)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max against a constant; gradient flows where ``a > floor``."""
    mask = a.data > floor
    return Tensor._make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# -- reductions and shape -----------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def transpose(a: Tensor) -> Tensor:
    return Tensor._make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                        lambda g: tuple(np.split(g, sizes, axis=axis)))


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return Tensor._make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """``x @ weight.T + bias`` as one node (weight is [out, in])."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear input width {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is None:
        return Tensor._make(out, (x, weight), lambda g: (g @ weight.data, g.T @ x.data))
    out = out + bias.data
    return Tensor._make(out, (x, weight, bias),
                        lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)))


def l2_normalize(v: Tensor, eps: float = NORM_EPS, axis: int = -1) -> Tensor:
    """``v / max(||v||, eps)`` along ``axis``."""
    norm = sqrt(tsum(v * v, axis=axis, keepdims=True))
    return v / maximum(norm, eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               stats: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Batch normalization over axis 0.

    With ``stats=None`` the batch mean and biased variance are used and
    returned (so the caller can update running averages); otherwise the
    given ``(mean, var)`` pair is treated as a constant.
    """
    if stats is None:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
    else:
        mu, var = stats
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    batch_stats = stats is None
    n = x.shape[0]

    def back(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.data
        if batch_stats:
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return Tensor._make(out, (x, gamma, beta), back), mu, var


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._make(out, (x,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


# -- randomness -----------------------------------------------------------------

RNG_ALGORITHM = "numpy-philox4x64"


class Rng:
    """Seeded random stream on the counter-based Philox generator.

    The bit generator is fixed so that streams are reproducible for a given
    seed and call sequence; :meth:`state`/:meth:`set_state` give a
    JSON-serializable snapshot for checkpoints.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def spawn(self, key: int) -> Rng:
        """Independent child stream derived from ``(seed, key)``."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, int(key)])))
        return child

    def state(self) -> str:
        st = self._gen.bit_generator.state
        return json.dumps(_jsonable(st), sort_keys=True)

    def set_state(self, text: str) -> None:
        st = json.loads(text)
        st["state"]["counter"] = np.array(st["state"]["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(st["state"]["key"], dtype=np.uint64)
        st["buffer"] = np.array(st["buffer"], dtype=np.uint64)
        self._gen.bit_generator.state = st

    # distributions
    def uniform(self, a: float = 0.0, b: float = 1.0, size=None) -> np.ndarray:
        if not b >= a:
            raise ValueError(f"uniform needs a <= b, got ({a}, {b})")
        return self._gen.uniform(a, b, size)

    def normal(self, mu: float = 0.0, sigma: float = 1.0, size=None) -> np.ndarray:
        if sigma < 0:
            raise ValueError(f"normal needs sigma >= 0, got {sigma}")
        return self._gen.normal(mu, sigma, size)

    def poisson(self, lam, size=None) -> np.ndarray:
        if np.any(np.asarray(lam) < 0):
            raise ValueError("poisson rate must be >= 0")
        return self._gen.poisson(lam, size)

    def bernoulli(self, p, size=None) -> np.ndarray:
        p_arr = np.asarray(p)
        if np.any((p_arr < 0) | (p_arr > 1)):
            raise ValueError("bernoulli probability must lie in [0, 1]")
        return self._gen.random(size if size is not None else p_arr.shape) < p

    def integers(self, low: int, high, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("permutation length must be >= 0")
        return self._gen.permutation(n)

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        if k < 0 or (not replace and k > n):
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return self._gen.choice(n, k, replace=replace)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def sample(rng: Rng, dist: str, *params, size=None) -> Tensor:
    """Draw a tensor from a named distribution.

    ``dist`` is one of uniform(a, b), normal(mu, sigma), poisson(lam),
    bernoulli(p), permutation(n), choice(n, k).
    """
    if dist == "uniform":
        out = rng.uniform(*params, size=size)
    elif dist == "normal":
        out = rng.normal(*params, size=size)
    elif dist == "poisson":
        out = rng.poisson(*params, size=size)
    elif dist == "bernoulli":
        out = rng.bernoulli(*params, size=size)
    elif dist == "permutation":
        out = rng.permutation(*params)
    elif dist == "choice":
        out = rng.choice(*params)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return Tensor(np.asarray(out, dtype=DEFAULT_DTYPE))
