"""
Immutable float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a read-only numpy array. Operations are pure functions that
return new tensors; when a ``Tape`` is active and any input is tracked by it,
the operation is recorded together with a closure that maps the output
gradient to input gradients.

    with Tape() as tape:
        x = tape.watch(Tensor([1.0, 2.0]))
        loss = ops.sum(x * x)
    grads = tape.backward(loss)
    grads[x]  # -> Tensor([2., 4.])

Records are appended in creation order, which is already a topological order,
so the backward pass walks them once in reverse.
"""

import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from shared.errors import NonFiniteError, ShapeError, TapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense float64 array; never modified after construction."""

    __slots__ = ("data", "__weakref__")

    def __init__(self, data: ArrayLike):
        if isinstance(data, Tensor):
            arr = data.data
        else:
            arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        """Wrap a freshly computed array without copying it."""
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op}: produced non-finite values")
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        out.data = arr
        return out

    @staticmethod
    def zeros(shape: Sequence[int]) -> "Tensor":
        return Tensor(np.zeros(tuple(shape)))

    @staticmethod
    def ones(shape: Sequence[int]) -> "Tensor":
        return Tensor(np.ones(tuple(shape)))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self.data, precision=4, threshold=8)})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_local = threading.local()


def _active_tapes() -> List["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


class _Record:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, op: str, out: Tensor, inputs: Tuple[Tensor, ...], backward: Backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Gradients:
    """Gradient lookup keyed by the watched leaf tensors."""

    def __init__(self, grads: Dict[int, Tensor], leaves: Dict[int, Tensor]):
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, leaf: Tensor) -> Tensor:
        if id(leaf) not in self._leaves:
            raise TapeError("tensor was not watched on this tape")
        return self._grads[id(leaf)]

    def __len__(self) -> int:
        return len(self._grads)


class Tape:
    """Records differentiable operations for one computation (one thread)."""

    def __init__(self):
        self._records: List[_Record] = []
        self._tracked: Dict[int, Tensor] = {}
        self._leaves: Dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        tapes = _active_tapes()
        if tapes and tapes[-1] is self:
            tapes.pop()

    def watch(self, tensor: Tensor) -> Tensor:
        """Mark a tensor as a leaf whose gradient ``backward`` will report."""
        self._leaves[id(tensor)] = tensor
        self._tracked[id(tensor)] = tensor
        return tensor

    def watch_all(self, tensors: Iterable[Tensor]) -> None:
        for t in tensors:
            self.watch(t)

    def is_tracked(self, tensor: Tensor) -> bool:
        return id(tensor) in self._tracked

    def _record(self, op: str, out: Tensor, inputs: Tuple[Tensor, ...], backward: Backward) -> None:
        if any(id(t) in self._tracked for t in inputs):
            self._tracked[id(out)] = out
            self._records.append(_Record(op, out, inputs, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> Gradients:
        """Gradients of a scalar loss with respect to every watched leaf."""
        if loss.size != 1 or loss.ndim > 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._tracked:
            raise TapeError("loss is not on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self._records):
            key = id(rec.out)
            g = grads.get(key) if key in self._leaves else grads.pop(key, None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or id(inp) not in self._tracked:
                    continue
                if id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi

        out: Dict[int, Tensor] = {}
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            out[key] = Tensor._wrap(np.zeros(leaf.shape), "backward") if g is None else Tensor._wrap(
                np.reshape(g, leaf.shape), "backward"
            )
        return Gradients(out, self._leaves)


def autodiff_backward(tape: Tape, loss: Tensor) -> Gradients:
    return tape.backward(loss)


def _emit(op: str, arr: np.ndarray, inputs: Tuple[Tensor, ...], backward: Backward) -> Tensor:
    out = Tensor._wrap(arr, op)
    for tape in _active_tapes():
        tape._record(op, out, inputs, backward)
    return out


def _t(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sum_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to an operand that was scalar-broadcast."""
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _conform(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(op, a.shape, b.shape)
    if (a.size == 1 and a.ndim > 1 and a.shape != b.shape) or (b.size == 1 and b.ndim > 1 and a.shape != b.shape):
        raise ShapeError(op, a.shape, b.shape, "only 0-d scalars broadcast")


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _t(a), _t(b)
    _conform("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _t(a), _t(b)
    _conform("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Hadamard (element-wise) product; a 0-d operand scales the other."""
    a, b = _t(a), _t(b)
    _conform("hadamard", a, b)
    return _emit(
        "hadamard",
        a.data * b.data,
        (a, b),
        lambda g: (_sum_to(g * b.data, a.shape), _sum_to(g * a.data, b.shape)),
    )


hadamard = mul


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _t(a), _t(b)
    _conform("div", a, b)
    if np.any(b.data == 0.0):
        raise NonFiniteError(f"div: zero in divisor of shape {b.shape}")
    return _emit(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (_sum_to(g / b.data, a.shape), _sum_to(-g * a.data / (b.data * b.data), b.shape)),
    )


def scale(a: ArrayLike, k: float) -> Tensor:
    a = _t(a)
    k = float(k)
    return _emit("scale", a.data * k, (a,), lambda g: (g * k,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NonFiniteError(f"log: non-positive input in tensor of shape {a.shape}")
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(np.maximum(a.data, 0.0))

    def backward(g):
        # the derivative at 0 is taken as 0 (subgradient of the norm)
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, g / (2.0 * safe), 0.0),)

    return _emit("sqrt", out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU; smooth everywhere."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner),)

    return _emit("gelu", out, (a,), backward)


# --------------------------------------------------------------------------
# Reductions and normalisation
# --------------------------------------------------------------------------


def _expand(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _emit("sum", np.asarray(out), (a,), lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size / max(np.asarray(out).size, 1)
    return _emit("mean", np.asarray(out), (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", out, (a,), backward)


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm over all entries (0-d result)."""
    return sqrt(sum(mul(a, a)))


# --------------------------------------------------------------------------
# Shape manipulation
# --------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _emit("reshape", out.copy(), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inverse),))


def index(a: Tensor, key) -> Tensor:
    out = np.array(a.data[key])

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, key, g)
        return (full,)

    return _emit("index", out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_t(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", tensors[0].shape, tensors[-1].shape) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def pick(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Row-wise selection ``logits[n, labels[n]]`` for (N, K) logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("pick", logits.shape, labels.shape)
    rows = np.arange(logits.shape[0])

    def backward(g):
        full = np.zeros(logits.shape)
        full[rows, labels] = g
        return (full,)

    return _emit("pick", logits.data[rows, labels].copy(), (logits,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (N, K) logits against integer labels."""
    return scale(mean(pick(log_softmax(logits, axis=-1), labels)), -1.0)


# --------------------------------------------------------------------------
# Linear algebra and network primitives
# --------------------------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """(..., n, k) @ (k, m); the right operand is a plain matrix."""
    a, b = _t(a), _t(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1]) if a.ndim > 1 else a.data[None, :]
        g2 = g.reshape(-1, b.shape[1]) if g.ndim > 1 else g[None, :]
        return ga, a2.T @ g2

    return _emit("matmul", a.data @ b.data, (a, b), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched (N, n, k) @ (N, k, m)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError("bmm", a.shape, b.shape)
    return _emit(
        "bmm",
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g),
    )


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` over the last axis."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError("linear", x.shape, w.shape, f"bias {b.shape}")

    def backward(g):
        x2 = x.data.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, w.shape[1])
        return g @ w.data.T, x2.T @ g2, g2.sum(axis=0)

    return _emit("linear", x.data @ w.data + b.data, (x, w, b), backward)


def _conv_raw(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    k = w.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    return np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 'same' convolution: (N, Ci, H, W) * (Co, Ci, k, k) + b."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape, "bias must have one entry per output channel")
    k = w.shape[-1]
    pad = k // 2
    out = _conv_raw(x.data, w.data, pad) + b.data[None, :, None, None]

    def backward(g):
        flipped = w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        gx = _conv_raw(g, np.ascontiguousarray(flipped), k - 1 - pad)
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _emit("conv2d", out, (x, w, b), backward)


def broadcast_channels(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-sample, per-channel vector (N, C) to feature maps (N, C, H, W)."""
    if x.ndim != 4 or v.shape != x.shape[:2]:
        raise ShapeError("broadcast_channels", x.shape, v.shape)
    return _emit(
        "broadcast_channels",
        x.data + v.data[:, :, None, None],
        (x, v),
        lambda g: (g, g.sum(axis=(2, 3))),
    )


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError("avg_pool2", x.shape, detail="needs (N, C, H, W) with even H, W")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return _emit("avg_pool2", out, (x,), lambda g: (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,))
