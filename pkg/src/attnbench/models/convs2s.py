"""Convolutional encoder-decoder with a separate attention hop per decoder layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..attention import AttentionResult, convs2s_attend, decoder_state_summary
from ..data import TokenBatch
from ..errors import ConfigError, DimensionError
from ..tensor import Tensor
from .base import Seq2SeqModel
from .layers import Embedding, Linear, Module, positional_representation, uniform_param, zeros_param


class GatedConv(Module):
    """Convolution from ``c`` to ``2c`` channels followed by a GLU back to ``c``."""

    def __init__(self, channels: int, kernel_size: int, rng, dtype):
        self.channels = channels
        self.kernel_size = kernel_size
        fan_in = kernel_size * channels
        self.w = uniform_param(rng, (fan_in, 2 * channels), fan_in, dtype)
        self.b = zeros_param((2 * channels,), dtype)

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        if x.shape[-1] != self.channels:
            raise ConfigError(f"conv over {self.channels} channels got input {x.shape}")
        if x.shape[1] < 1:
            raise DimensionError("convolution over an empty sequence")
        k = self.kernel_size
        # causal: all padding on the left, so position t sees inputs t-k+1 .. t
        left, right = (k - 1, 0) if causal else ((k - 1) // 2, k // 2)
        return T.glu(T.conv1d(x, self.w, self.b, left, right))


def conv_block(x: Tensor, conv: GatedConv, causal: bool = False) -> Tensor:
    """Residual gated convolution; sequence length is preserved."""
    return x + conv(x, causal)


@dataclass
class EncoderOutput:
    z: Tensor            # [B, S, E] encoder outputs in embedding space
    e: Tensor            # [B, S, E] source input embeddings (token + position)
    mask: np.ndarray     # [B, 1, S]


class ConvS2S(Seq2SeqModel):
    family = "conv_s2s"

    def __init__(self, config, rng, dtype=np.float64):
        super().__init__(config, dtype)
        c = config
        v, e, h, p, n = c.vocab_size, c.embed_dim, c.hidden_dim, c.max_positions, c.n_layers
        dt = self.dtype
        self.src_tok = Embedding(v, e, rng, dt)
        self.src_pos = Embedding(p, e, rng, dt)
        self.enc_in = Linear(e, h, rng, dt)
        self.enc_convs = [GatedConv(h, c.kernel_size, rng, dt) for _ in range(n)]
        self.enc_out = Linear(h, e, rng, dt)
        self.tgt_tok = Embedding(v, e, rng, dt)
        self.tgt_pos = Embedding(p, e, rng, dt)
        self.dec_in = Linear(e, h, rng, dt)
        self.dec_convs = [GatedConv(h, c.kernel_size, rng, dt) for _ in range(n)]
        self.attn_in = [Linear(h, e, rng, dt) for _ in range(n)]
        self.attn_out = [Linear(e, h, rng, dt) for _ in range(n)]
        self.dec_out = Linear(h, e, rng, dt)
        self.output = Linear(e, v, rng, dt)

    def _embed(self, tok: Embedding, pos: Embedding, ids: np.ndarray) -> Tensor:
        positions = np.arange(ids.shape[1])
        return tok(ids) + positional_representation("conv_s2s", positions, self.config.embed_dim,
                                                    pos.table)

    def encode(self, source: TokenBatch, rng=None) -> EncoderOutput:
        e = self._drop(self._embed(self.src_tok, self.src_pos, source.ids), rng)
        x = self.enc_in(e)
        # zero padded steps so each row convolves exactly as it would unpadded
        live = None
        if (source.lengths < source.max_len).any():
            live = Tensor((np.arange(source.max_len)[None, :] < source.lengths[:, None])
                          .astype(self.dtype)[..., None])
        for conv in self.enc_convs:
            x = self._drop(x, rng)
            x = conv_block(x if live is None else x * live, conv)
        mask = self.source_mask(source)[:, None, :]
        return EncoderOutput(self.enc_out(x), e, mask)

    def decode(self, decoder_inputs: np.ndarray, enc: EncoderOutput, rng=None,
               trace: list | None = None) -> Tensor:
        g = self._drop(self._embed(self.tgt_tok, self.tgt_pos, decoder_inputs), rng)
        x = self.dec_in(g)
        for layer, conv in enumerate(self.dec_convs):
            h = conv(self._drop(x, rng), causal=True)
            att = self.attend(layer, h, g, enc)
            if trace is not None:
                trace.append({"layer": layer, "h": h.data, "g": g.data,
                              "weights": att.weights.data, "context": att.context.data})
            x = x + h + self.attn_out[layer](att.context)
        return self.output(self._drop(self.dec_out(x), rng))

    def attend(self, layer: int, h: Tensor, g: Tensor, enc: EncoderOutput) -> AttentionResult:
        proj = self.attn_in[layer]
        d = decoder_state_summary(h, g, proj.w, proj.b)
        return convs2s_attend(d, enc.z, enc.e, enc.mask)

    def forward(self, source, target, rng=None, trace: list | None = None):
        self._check_pair(source, target)
        return self.decode(target.decoder_inputs(), self.encode(source, rng), rng, trace)

    def start_decoding(self, source):
        return self.encode(source), np.zeros((source.batch_size, 0), dtype=np.int64)

    def decode_step(self, state, prev_tokens):
        enc, prefix = state
        prefix = np.concatenate([prefix, np.asarray(prev_tokens)[:, None]], axis=1)
        logits = self.decode(prefix, enc)
        return logits[:, -1], (enc, prefix)
