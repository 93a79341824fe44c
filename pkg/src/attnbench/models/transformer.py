"""Post-norm transformer encoder-decoder with sinusoidal positions."""
from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..attention import causal_mask, multi_head
from ..tensor import Tensor
from .base import Seq2SeqModel
from .layers import Embedding, LayerNorm, Linear, Module, positional_representation, uniform_param


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng, dtype):
        self.n_heads = n_heads
        self.w_q = uniform_param(rng, (d, d), d, dtype)
        self.w_k = uniform_param(rng, (d, d), d, dtype)
        self.w_v = uniform_param(rng, (d, d), d, dtype)
        self.w_o = uniform_param(rng, (d, d), d, dtype)

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask=None) -> Tensor:
        return multi_head(x_q, x_kv, self.n_heads, self.w_q, self.w_k, self.w_v, self.w_o, mask)


class FeedForward(Module):
    def __init__(self, d: int, inner: int, rng, dtype):
        self.up = Linear(d, inner, rng, dtype)
        self.down = Linear(inner, d, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.relu(self.up(x)))


class EncoderLayer(Module):
    def __init__(self, cfg, rng, dtype):
        d = cfg.hidden_dim
        self.attn = MultiHeadAttention(d, cfg.n_heads, rng, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.ffn = FeedForward(d, cfg.ffn_dim, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)


class DecoderLayer(Module):
    def __init__(self, cfg, rng, dtype):
        d = cfg.hidden_dim
        self.self_attn = MultiHeadAttention(d, cfg.n_heads, rng, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.cross_attn = MultiHeadAttention(d, cfg.n_heads, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.ffn = FeedForward(d, cfg.ffn_dim, rng, dtype)
        self.norm3 = LayerNorm(d, dtype)


class Transformer(Seq2SeqModel):
    family = "transformer"

    def __init__(self, config, rng, dtype=np.float64):
        super().__init__(config, dtype)
        v, d = config.vocab_size, config.hidden_dim
        self.src_embed = Embedding(v, d, rng, self.dtype)
        self.tgt_embed = Embedding(v, d, rng, self.dtype)
        self.enc_layers = [EncoderLayer(config, rng, self.dtype) for _ in range(config.n_layers)]
        self.dec_layers = [DecoderLayer(config, rng, self.dtype) for _ in range(config.n_layers)]
        self.output = Linear(d, v, rng, self.dtype)

    def _embed(self, emb: Embedding, ids: np.ndarray, rng) -> Tensor:
        d = self.config.hidden_dim
        pe = positional_representation("transformer", np.arange(ids.shape[1]), d, dtype=self.dtype)
        return self._drop(T.scale(emb(ids), math.sqrt(d)) + pe, rng)

    def encode(self, source, rng=None):
        mask = self.source_mask(source)[:, None, None, :]
        x = self._embed(self.src_embed, source.ids, rng)
        for layer in self.enc_layers:
            x = layer.norm1(x + self._drop(layer.attn(x, x, mask), rng))
            x = layer.norm2(x + self._drop(layer.ffn(x), rng))
        return x, mask

    def decode(self, decoder_inputs: np.ndarray, memory: Tensor, src_mask, rng=None) -> Tensor:
        self_mask = causal_mask(decoder_inputs.shape[1], self.dtype)
        y = self._embed(self.tgt_embed, decoder_inputs, rng)
        for layer in self.dec_layers:
            y = layer.norm1(y + self._drop(layer.self_attn(y, y, self_mask), rng))
            y = layer.norm2(y + self._drop(layer.cross_attn(y, memory, src_mask), rng))
            y = layer.norm3(y + self._drop(layer.ffn(y), rng))
        return self.output(y)

    def forward(self, source, target, rng=None):
        self._check_pair(source, target)
        memory, mask = self.encode(source, rng)
        return self.decode(target.decoder_inputs(), memory, mask, rng)

    def start_decoding(self, source):
        memory, mask = self.encode(source)
        return memory, mask, np.zeros((source.batch_size, 0), dtype=np.int64)

    def decode_step(self, state, prev_tokens):
        memory, mask, prefix = state
        prefix = np.concatenate([prefix, np.asarray(prev_tokens)[:, None]], axis=1)
        logits = self.decode(prefix, memory, mask)
        return logits[:, -1], (memory, mask, prefix)
