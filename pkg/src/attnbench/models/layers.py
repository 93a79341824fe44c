"""Parameter containers and the small layers the four model families share."""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterator

import numpy as np

from .. import tensor as T
from ..errors import ConfigError, SequenceTooLongError
from ..tensor import Tensor


def uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    """Weight matrix drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    dtype = np.dtype(dtype)
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.random(shape, dtype=dtype) * dtype.type(2 * bound) - dtype.type(bound)
    return Tensor(data, requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Holds parameters (leaf tensors with ``requires_grad``) and submodules.

    Parameter names follow attribute order, dotted through submodules and
    indexed through lists, e.g. ``enc_layers.0.attn.w_q``.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    @contextmanager
    def evaluating(self):
        prev = self.training
        self.eval()
        try:
            yield self
        finally:
            self.train(prev)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype, bias: bool = True):
        self.w = uniform_param(rng, (n_in, n_out), n_in, dtype)
        self.b = zeros_param((n_out,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y if self.b is None else y + self.b


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng, dtype):
        self.table = uniform_param(rng, (n, dim), n, dtype)

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = zeros_param((dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class LSTMCell(Module):
    """Standard LSTM with gate order input, forget, candidate, output."""

    def __init__(self, n_in: int, hidden: int, rng, dtype):
        self.hidden = hidden
        self.w_x = uniform_param(rng, (n_in, 4 * hidden), n_in, dtype)
        self.w_h = uniform_param(rng, (hidden, 4 * hidden), hidden, dtype)
        self.b = zeros_param((4 * hidden,), dtype)

    def project_inputs(self, x: Tensor) -> Tensor:
        return x @ self.w_x + self.b

    def step(self, xp: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        """One update from pre-projected input ``xp`` (see :meth:`project_inputs`)."""
        if h.shape[-1] != self.hidden or xp.shape[-1] != 4 * self.hidden:
            raise ConfigError(f"LSTM cell of width {self.hidden} got state {h.shape}, "
                              f"input projection {xp.shape}")
        gates = xp + h @ self.w_h
        n = self.hidden
        i = T.sigmoid(gates[..., :n])
        f = T.sigmoid(gates[..., n:2 * n])
        g = T.tanh(gates[..., 2 * n:3 * n])
        o = T.sigmoid(gates[..., 3 * n:])
        c = f * c + i * g
        return o * T.tanh(c), c

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        return self.step(self.project_inputs(x), *state)


class GRUCell(Module):
    """GRU with separate input and recurrent biases (reset gate inside the candidate)."""

    def __init__(self, n_in: int, hidden: int, rng, dtype):
        self.hidden = hidden
        self.w_x = uniform_param(rng, (n_in, 3 * hidden), n_in, dtype)
        self.b_x = zeros_param((3 * hidden,), dtype)
        self.w_h = uniform_param(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_h = zeros_param((3 * hidden,), dtype)

    def project_inputs(self, x: Tensor) -> Tensor:
        return x @ self.w_x + self.b_x

    def step(self, xp: Tensor, h: Tensor) -> Tensor:
        if h.shape[-1] != self.hidden or xp.shape[-1] != 3 * self.hidden:
            raise ConfigError(f"GRU cell of width {self.hidden} got state {h.shape}, "
                              f"input projection {xp.shape}")
        n = self.hidden
        hp = h @ self.w_h + self.b_h
        r = T.sigmoid(xp[..., :n] + hp[..., :n])
        z = T.sigmoid(xp[..., n:2 * n] + hp[..., n:2 * n])
        cand = T.tanh(xp[..., 2 * n:] + r * hp[..., 2 * n:])
        return cand + z * (h - cand)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step(self.project_inputs(x), h)


def sinusoidal_encoding(positions, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed encoding: sin on even channels, cos on odd, geometric wavelengths."""
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(dim)
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


def positional_representation(family: str, positions, dim: int,
                              table: Tensor | None = None, dtype=np.float64) -> Tensor:
    """Position codes added to token embeddings.

    ``conv_s2s`` gathers rows of its learned ``table`` (so positions must be
    below the table size); ``transformer`` uses the fixed sinusoidal code.
    """
    positions = np.asarray(positions, dtype=np.int64)
    if family == "conv_s2s":
        if table is None:
            raise ConfigError("learned positions need the model's position table")
        limit = table.shape[0]
        if positions.size and positions.max() >= limit:
            raise SequenceTooLongError(f"position {int(positions.max())} exceeds the "
                                       f"{limit} learned positions")
        return T.embedding(table, positions)
    if family == "transformer":
        return Tensor(sinusoidal_encoding(positions, dim, dtype))
    raise ConfigError(f"{family} has no positional representation")
