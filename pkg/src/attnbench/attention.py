"""Attention as a soft selection: context = values weighted by softmax(scores).

Every concrete mechanism here (last-state selection, additive scoring,
scaled dot-product, multi-head, convolutional decoder attention) reduces to
:func:`attend` with a different way of producing the scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionResult:
    context: Tensor
    weights: Tensor


def _const(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    # [..., n] x [..., n, d] -> [..., d]
    w = T.reshape(weights, weights.shape[:-1] + (1, weights.shape[-1]))
    ctx = T.matmul(w, values)
    return T.reshape(ctx, ctx.shape[:-2] + (ctx.shape[-1],))


def attend(values: Tensor, scores: Tensor) -> AttentionResult:
    """Select softly among ``values[..., n, d]`` according to ``scores[..., n]``."""
    scores = _const(scores, values.dtype)
    if values.ndim < 2 or scores.shape[-1] != values.shape[-2]:
        raise DimensionError(f"attend: {scores.shape[-1] if scores.ndim else 0} scores "
                             f"for values of shape {values.shape}")
    weights = T.softmax(scores, axis=-1)
    return AttentionResult(_weighted_sum(weights, values), weights)


def last_element_attention(hidden_states: Tensor, lengths=None) -> AttentionResult:
    """All weight on the final state: the fixed context of an attention-free encoder.

    ``hidden_states`` is ``[T, d]`` or ``[B, T, d]``; with ``lengths`` the
    last *valid* state of each row is selected. The context is gathered by
    indexing, so it equals the selected state bit for bit.
    """
    if hidden_states.ndim < 2 or hidden_states.shape[-2] == 0:
        raise DimensionError(f"last_element_attention: empty sequence {hidden_states.shape}")
    n = hidden_states.shape[-2]
    dtype = hidden_states.dtype
    if hidden_states.ndim == 2:
        w = np.zeros(n, dtype=dtype)
        w[-1] = 1.0
        return AttentionResult(hidden_states[n - 1], Tensor(w))
    b = hidden_states.shape[0]
    last = np.full(b, n - 1) if lengths is None else np.asarray(lengths, dtype=np.int64) - 1
    if last.min() < 0 or last.max() >= n:
        raise DimensionError("last_element_attention: lengths outside [1, T]")
    w = np.zeros((b, n), dtype=dtype)
    w[np.arange(b), last] = 1.0
    return AttentionResult(hidden_states[np.arange(b), last], Tensor(w))


@dataclass
class AdditiveScoreParams:
    """Two-layer scorer: ``score = w_out . tanh(W_in [s; h] + b_in)``."""

    w_in: Tensor   # [d_dec + d_enc, d_attn]
    b_in: Tensor   # [d_attn]
    w_out: Tensor  # [d_attn, 1]


def additive_score(decoder_state: Tensor, encoder_states: Tensor,
                   params: AdditiveScoreParams) -> Tensor:
    """Score each encoder state against the previous decoder state.

    ``decoder_state`` is ``[..., d_dec]`` and ``encoder_states`` ``[..., T, d_enc]``;
    returns ``[..., T]``.
    """
    d_dec, d_enc = decoder_state.shape[-1], encoder_states.shape[-1]
    if params.w_in.shape[0] != d_dec + d_enc:
        raise ConfigError(f"additive_score: scorer expects {params.w_in.shape[0]} inputs, "
                          f"got {d_dec} + {d_enc}")
    if params.w_out.shape != (params.w_in.shape[1], 1):
        raise ConfigError(f"additive_score: output weight {params.w_out.shape} vs "
                          f"hidden width {params.w_in.shape[1]}")
    t = encoder_states.shape[-2]
    s = T.reshape(decoder_state, decoder_state.shape[:-1] + (1, d_dec))
    s = T.broadcast_to(s, encoder_states.shape[:-1] + (d_dec,))
    if s.shape[:-2] != encoder_states.shape[:-2]:
        raise ConfigError(f"additive_score: batch {decoder_state.shape} vs {encoder_states.shape}")
    hidden = T.tanh(T.concat([s, encoder_states], axis=-1) @ params.w_in + params.b_in)
    scores = hidden @ params.w_out
    return T.reshape(scores, scores.shape[:-2] + (t,))


def causal_mask(n: int, dtype=np.float64) -> np.ndarray:
    """``[n, n]`` additive mask: 0 on and below the diagonal, -inf above."""
    if n < 1:
        raise DimensionError("causal_mask needs n >= 1")
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


def key_padding_mask(lengths, m: int, dtype=np.float64) -> np.ndarray:
    """``[B, m]`` additive mask hiding key positions at or beyond each row's length."""
    lengths = np.asarray(lengths)
    mask = np.zeros((lengths.shape[0], m), dtype=dtype)
    mask[np.arange(m)[None, :] >= lengths[:, None]] = -np.inf
    return mask


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor, mask=None) -> AttentionResult:
    """``softmax(q k^T / sqrt(d_k) + mask) v`` over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"scaled_dot_product: query width {q.shape} vs key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"scaled_dot_product: {k.shape[-2]} keys vs {v.shape[-2]} values")
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        mask = _const(mask, scores.dtype)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError:
            raise DimensionError(f"mask {mask.shape} does not broadcast to scores "
                                 f"{scores.shape}") from None
        if np.broadcast_shapes(mask.shape, scores.shape) != scores.shape:
            raise DimensionError(f"mask {mask.shape} would enlarge scores {scores.shape}")
        scores = scores + mask
    weights = T.softmax(scores, axis=-1)
    return AttentionResult(T.matmul(weights, v), weights)


def qkv_project(x_q: Tensor, x_kv: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor):
    """Queries from ``x_q``; keys and values from ``x_kv`` (the same tensor for self-attention)."""
    try:
        return x_q @ w_q, x_kv @ w_k, x_kv @ w_v
    except DimensionError as exc:
        raise ConfigError(f"qkv_project: {exc}") from None


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = T.reshape(x, tuple(lead) + (n, n_heads, d // n_heads))
    return T.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = T.swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return T.reshape(x, tuple(lead) + (n, h * dh))


def multi_head(x_q: Tensor, x_kv: Tensor, n_heads: int, w_q: Tensor, w_k: Tensor,
               w_v: Tensor, w_o: Tensor, mask=None) -> Tensor:
    """Parallel scaled dot-product heads over column blocks of the projections.

    Head ``h`` uses columns ``h*d_h : (h+1)*d_h`` of ``w_q``, ``w_k`` and
    ``w_v`` with ``d_h = d_model / n_heads``; head outputs are concatenated in
    order and mapped through ``w_o``. ``mask`` must broadcast against
    ``[..., n_heads, n_q, n_kv]``.
    """
    d_model = w_q.shape[1]
    if n_heads < 1 or d_model % n_heads:
        raise ConfigError(f"multi_head: width {d_model} not divisible by {n_heads} heads")
    if w_k.shape[1] != d_model or w_v.shape[1] % n_heads:
        raise ConfigError("multi_head: projection widths disagree")
    q, k, v = qkv_project(x_q, x_kv, w_q, w_k, w_v)
    heads = scaled_dot_product(_split_heads(q, n_heads), _split_heads(k, n_heads),
                               _split_heads(v, n_heads), mask)
    try:
        return _merge_heads(heads.context) @ w_o
    except DimensionError as exc:
        raise ConfigError(f"multi_head output projection: {exc}") from None


def decoder_state_summary(h: Tensor, g: Tensor, w_d: Tensor, b_d: Tensor) -> Tensor:
    """Per-position affine summary of the decoder state plus the target embedding."""
    try:
        return h @ w_d + b_d + g
    except DimensionError as exc:
        raise ConfigError(f"decoder_state_summary: {exc}") from None


def convs2s_attend(d: Tensor, z: Tensor, e: Tensor, mask=None) -> AttentionResult:
    """Dot-product weights of each summary ``d_i`` against encoder outputs ``z_j``.

    The context is the weighted sum of ``z_j + e_j`` (encoder output plus the
    source input embedding). ``mask`` is additive over ``[..., n, m]``.
    """
    if d.shape[-1] != z.shape[-1]:
        raise DimensionError(f"convs2s_attend: summary width {d.shape} vs encoder {z.shape}")
    if z.shape != e.shape:
        raise DimensionError(f"convs2s_attend: encoder outputs {z.shape} vs embeddings {e.shape}")
    scores = T.matmul(d, T.swapaxes(z, -1, -2))
    if mask is not None:
        scores = scores + _const(mask, scores.dtype)
    weights = T.softmax(scores, axis=-1)
    return AttentionResult(T.matmul(weights, z + e), weights)
