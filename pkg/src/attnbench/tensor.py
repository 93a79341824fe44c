"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable operation appends a :class:`Node` to the active
:class:`Tape`. :func:`backward` walks the tape in exact reverse recording
order, which is a valid reverse topological order because an operation can
only consume tensors that already exist.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    EmptyLossError,
    MaskingError,
    VocabularyError,
)

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = [Tape()]
    return stack


def current_tape() -> "Tape":
    """The tape new operations are recorded on (one default tape per thread)."""
    return _tape_stack()[-1]


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable recording; results of ops inside never require grad."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    __slots__ = ("inputs", "output", "backward", "index")

    def __init__(self, inputs, output, backward, index):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.index = index


class Tape:
    """Ordered record of operations.

    Use as a context manager to scope recording to one training step::

        with Tape():
            loss = model_loss(...)
            backward(loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack[-1] is not self:
            raise ContractError("tapes must be exited in LIFO order")
        stack.pop()
        self.clear()

    def record(self, inputs, output, backward) -> Node:
        node = Node(inputs, output, backward, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self) -> None:
        # break output <-> node cycles so intermediates are freed promptly
        for node in self.nodes:
            out = node.output
            if out is not None:
                out._node = None
                out._tape = None
            node.inputs = node.output = node.backward = None
        self.nodes = []


class Tensor:
    """A dense n-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._tape: Tape | None = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators ---------------------------------------------------------
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

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method forms ------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def softmax(self, axis=-1):
        return softmax(self, axis)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        # python scalars adopt the other operand's dtype at the call site
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._tape = None
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = current_tape()
        out._node = tape.record(tuple(inputs), out, backward_fn)
        out._tape = tape
    else:
        out.requires_grad = False
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Promote operands to tensors; python/numpy scalars take the tensor dtype."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.dtype.type(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: add, mul, tanh, sigmoid, relu or scale."""
    table = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
             "scale": scale, "sub": sub, "exp": exp, "log": log}
    try:
        fn = table[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules for leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                # fold batch dims into rows: one GEMM instead of a batched one plus a sum
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), back)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, axes)


def getitem(x: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays, not Tensors")
    out = x.data[index]
    shape = x.shape
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=basic) if basic else out, (x,), back)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} "
                             f"do not agree off axis {axis}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: shapes {[t.shape for t in tensors]} differ") from None
    ax = axis % out.ndim

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _make(out, tensors, back)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: {x.shape} -> {shape}") from None
    src = x.shape
    return _make(out, (x,), lambda g: (unbroadcast(g, src),))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# normalised exponentials and losses


def _check_not_fully_masked(data: np.ndarray, axis: int) -> None:
    if data.size and np.isneginf(data).all(axis=axis).any():
        raise MaskingError("softmax over a slice whose entries are all -inf")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; entries at -inf receive exactly zero weight."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    axis = axis % x.ndim
    _check_not_fully_masked(x.data, axis)
    moved = np.moveaxis(x.data, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    y = np.moveaxis(_kernels.softmax_rows(flat).reshape(moved.shape), -1, axis)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = axis % x.ndim
    _check_not_fully_masked(x.data, axis)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), back)


def cross_entropy(logits: Tensor, targets, ignore_id: int | None = 0) -> Tensor:
    """Mean negative log-softmax probability of ``targets``.

    ``logits`` is ``[n, V]`` (leading dims are flattened); positions whose
    target equals ``ignore_id`` are skipped entirely.
    """
    logits = as_tensor(logits)
    v = logits.shape[-1]
    flat = logits.data.reshape(-1, v)
    tg = np.asarray(targets, dtype=np.int64).reshape(-1)
    if tg.shape[0] != flat.shape[0]:
        raise DimensionError(f"cross_entropy: {flat.shape[0]} logit rows vs {tg.shape[0]} targets")
    ign = -1 if ignore_id is None else int(ignore_id)
    live = tg[tg != ign]
    if live.size == 0:
        raise EmptyLossError("cross_entropy: every target position is ignored")
    if live.min() < 0 or live.max() >= v:
        raise VocabularyError(f"cross_entropy: target id outside [0, {v})")
    total, count, dflat = _kernels.nll_rows(flat, tg, ign)
    out = np.asarray(total / count, dtype=logits.dtype)
    shape = logits.shape

    def back(g):
        return ((dflat * (g / count)).reshape(shape),)

    return _make(out, (logits,), back)


# ---------------------------------------------------------------------------
# layers-as-ops


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the last axis: first half * sigmoid(second half)."""
    c2 = x.shape[-1]
    if c2 % 2:
        raise DimensionError(f"glu: last dimension {c2} is odd")
    c = c2 // 2
    a, b = x.data[..., :c], x.data[..., c:]
    gate = expit(b)

    def back(g):
        return (np.concatenate([g * gate, g * a * gate * (1.0 - gate)], axis=-1),)

    return _make(a * gate, (x,), back)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity (the very same object) when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` for integer ``ids`` of any shape."""
    ids = np.asarray(getattr(ids, "ids", ids), dtype=np.int64)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = int(ids.max()) if ids.max() >= v else int(ids.min())
        raise VocabularyError(f"token id {bad} outside vocabulary of size {v}")
    out = table.data[ids]

    def back(g):
        full = np.zeros_like(table.data)
        _kernels.scatter_add_rows(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(out, (table,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine params {gamma.shape}/{beta.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), back)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, pad_left: int, pad_right: int) -> Tensor:
    """1-D convolution over ``[B, T, C]`` with weight ``[k*C, C_out]``.

    Window row ``j*C + c`` of the weight multiplies input channel ``c`` at
    offset ``j`` inside the (zero-padded) window.
    """
    if x.ndim != 3:
        raise DimensionError(f"conv1d expects [B, T, C], got {x.shape}")
    b, t, c = x.shape
    kc = weight.shape[0]
    if kc % c:
        raise DimensionError(f"conv1d: weight rows {kc} not a multiple of channels {c}")
    k = kc // c
    t_out = t + pad_left + pad_right - k + 1
    if t < 1 or t_out < 1:
        raise DimensionError(f"conv1d: length {t} too short for kernel {k}")
    cols = _kernels.unfold1d(x.data, k, pad_left, pad_right)
    out = cols @ weight.data
    if bias is not None:
        out += bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = gw = None
        if x.requires_grad:
            gx = _kernels.fold1d(g @ weight.data.T, k, pad_left, pad_right, t)
        if weight.requires_grad:
            gw = cols.reshape(-1, kc).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _make(out, inputs, back)


# ---------------------------------------------------------------------------


def backward(loss: Tensor, retain_tape: bool = False) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` arrays (parameters are
    zeroed by the optimizer loop). The tape is cleared afterwards unless
    ``retain_tape`` is set.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = loss._tape
    loss.grad = seed
    for node in reversed(tape.nodes[: loss._node.index + 1]):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.dtype != inp.dtype:
                gi = gi.astype(inp.dtype)
            inp.grad = gi if inp.grad is None else inp.grad + gi
    if not retain_tape:
        tape.clear()


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                             for p in params if p.grad is not None)))
