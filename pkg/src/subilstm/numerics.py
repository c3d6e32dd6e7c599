"""Dense tensors with a reverse-mode gradient tape.

Tensors wrap a numpy array. Operations executed while a :class:`Tape` is
active (``with Tape() as tape: ...``) are recorded in execution order, and
:func:`backward` walks the recorded nodes in reverse to produce gradients
for every leaf tensor created with ``requires_grad=True``. Outside a tape,
operations are plain numpy computations with no bookkeeping.

Randomness goes through :class:`Rng`, a thin wrapper around numpy's
counter-based Philox generator so that a seed reproduces the same draws on
every platform.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Rng",
    "NonFiniteError",
    "backward",
    "grad_check",
    "init_params",
    "tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "absolute",
    "maximum",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "take",
    "sum",
    "mean",
    "max_axis",
    "log_softmax",
    "cross_entropy",
    "custom_op",
]


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces NaN or Inf where finite values are required."""


# ---------------------------------------------------------------------------
# tape

_TAPE_STACK: list["Tape"] = []


class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as operations execute, so the list is topologically
    ordered by construction. A tape is single-threaded while recording.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, output: "Tensor", inputs: tuple, vjp: Callable) -> None:
        output.grad_id = (self, len(self.nodes))
        self.nodes.append(_Node(inputs, output, vjp))

    def tracks(self, t: "Tensor") -> bool:
        return t.requires_grad or (t.grad_id is not None and t.grad_id[0] is self)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    """A dense array that can take part in gradient recording.

    ``requires_grad`` marks a leaf (a parameter); ``grad_id`` is set when the
    tensor is the output of a recorded operation.
    """

    __slots__ = ("data", "requires_grad", "grad_id", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad_id = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not self.is_finite():
            raise NonFiniteError(f"{what} contains NaN or Inf")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = " leaf" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return len(self.data)

    # operators
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return sum(self, axis)


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def custom_op(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap a precomputed result as a recorded operation.

    ``vjp(g)`` must return one gradient (or ``None``) per input.
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(tape.tracks(x) for x in inputs):
        tape.record(out, tuple(inputs), vjp)
    return out


_op = custom_op


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors (a vector on the left is treated as a row)."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    if ad.ndim == 1:
        out = ad @ bd
        return _op(out, (a, b), lambda g: (bd @ g, np.outer(ad, g)))
    return _op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _op(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * np.tanh(0.5 * x.data) + 0.5
    return _op(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _op(np.where(pos, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * pos,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _op(np.abs(x.data), (x,), lambda g: (g * sign,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on exact ties the gradient goes to ``a``."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    first = a.data >= b.data
    return _op(
        np.where(first, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * first, a.shape), _unbroadcast(g * ~first, b.shape)),
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _op(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def take(x: Tensor, index) -> Tensor:
    """``x[index]`` for basic or advanced numpy indexing; gradients scatter-add."""
    if isinstance(index, Tensor):
        raise TypeError("index with an integer array, not a Tensor")
    shape, dtype = x.shape, x.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _op(x.data[index], (x,), vjp)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _op(np.asarray(x.data.sum(axis=axis)), (x,), vjp)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def max_axis(x: Tensor, axis: int = 0) -> Tensor:
    """Max over one axis; the gradient goes to the first maximal entry."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape, dtype = x.shape, x.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _op(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return _op(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (B x C) against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return (d * (g / n),)

    return _op(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of a scalar ``loss`` for every leaf recorded on ``tape``.

    Returns a dict keyed by the leaf tensors themselves. Leaves that the
    loss does not depend on get zero gradients.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.grad_id is None or loss.grad_id[0] is not tape:
        raise ValueError("loss was not produced on this tape")
    last = loss.grad_id[1]
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes[: last + 1]:
        for x in node.inputs:
            if x.requires_grad and id(x) not in leaves:
                leaves[id(x)] = x

    for node in reversed(tape.nodes[: last + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for x, gx in zip(node.inputs, node.vjp(g)):
            if gx is None or not tape.tracks(x):
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx

    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        out[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g).reshape(leaf.shape)
    return out


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` takes no arguments and reads the current values of ``params``.
    The error for one coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    params = list(params)
    if analytic is None:
        with Tape() as tape:
            loss = f()
        grads = backward(tape, loss)
        analytic = [grads.get(p, np.zeros_like(p.data)) for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        base = p.data
        flat_a = np.asarray(a).reshape(-1)
        for k in range(base.size):
            plus = base.copy()
            plus.reshape(-1)[k] += eps
            p.data = plus
            fp = float(f().data)
            minus = base.copy()
            minus.reshape(-1)[k] -= eps
            p.data = minus
            fm = float(f().data)
            p.data = base
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError(f"f is not finite near coordinate {k} of {p!r}")
            num = (fp - fm) / (2.0 * eps)
            ana = float(flat_a[k])
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# randomness and initialisation


class Rng:
    """Seeded random stream backed by numpy's Philox (counter-based) generator.

    Draws are bit-identical across platforms for a given seed. ``child(key)``
    derives an independent stream without consuming draws from this one.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, key: int) -> "Rng":
        mixed = np.random.SeedSequence([self.seed, int(key)]).generate_state(2, np.uint32)
        return Rng((int(mixed[0]) << 32) | int(mixed[1]))

    def uniform(self, low: float, high: float, shape=(), dtype=np.float64) -> np.ndarray:
        u = self._gen.random(shape)
        return (low + (high - low) * u).astype(dtype, copy=False)

    def random(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, replace: bool = True):
        return self._gen.choice(n, size=size, replace=replace)


def init_params(
    shape,
    scheme: str,
    rng: Rng | None = None,
    fan_in: int | None = None,
    dtype=np.float64,
    name: str | None = None,
) -> Tensor:
    """Create a parameter leaf.

    ``scheme`` is ``"uniform"`` (bounded by 1/sqrt(fan_in), fan_in defaulting
    to the last dimension), ``"zeros"`` or ``"ones"``.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if scheme == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif scheme == "ones":
        data = np.ones(shape, dtype=dtype)
    elif scheme == "uniform":
        if fan_in is None:
            fan_in = shape[-1] if shape else 0
        if fan_in <= 0:
            raise ValueError("uniform init needs a positive fan_in")
        if rng is None:
            raise ValueError("uniform init needs an Rng")
        bound = 1.0 / math.sqrt(fan_in)
        data = rng.uniform(-bound, bound, shape, dtype=dtype)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(data, requires_grad=True, name=name)


def parameters_unique(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Drop repeated parameter objects while keeping first-seen order."""
    seen, out = set(), []
    for t in tensors:
        if id(t) not in seen:
            seen.add(id(t))
            out.append(t)
    return out
