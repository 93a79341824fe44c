"""LSTM encoder-decoder without learned attention.

The encoder's hidden states are reduced to a single context vector by
putting all attention on the last valid state; that vector becomes the
decoder's initial hidden state and is never shown to the decoder again.
"""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..attention import AttentionResult, last_element_attention
from ..data import TokenBatch
from ..tensor import Tensor
from .base import Seq2SeqModel
from .layers import Embedding, Linear, LSTMCell


class SutskeverLSTM(Seq2SeqModel):
    family = "lstm_plain"

    def __init__(self, config, rng, dtype=np.float64):
        super().__init__(config, dtype)
        v, e, h = config.vocab_size, config.embed_dim, config.hidden_dim
        self.src_embed = Embedding(v, e, rng, self.dtype)
        self.encoder = LSTMCell(e, h, rng, self.dtype)
        self.tgt_embed = Embedding(v, e, rng, self.dtype)
        self.decoder = LSTMCell(e, h, rng, self.dtype)
        self.output = Linear(h, v, rng, self.dtype)

    def _zeros(self, b: int) -> Tensor:
        return Tensor(np.zeros((b, self.config.hidden_dim), dtype=self.dtype))

    def encoder_states(self, source: TokenBatch, rng=None) -> Tensor:
        """All encoder hidden states ``[B, T, H]`` (entries past a row's length are junk)."""
        x = self._drop(self.src_embed(source.ids), rng)
        xp = self.encoder.project_inputs(x)
        h = c = self._zeros(source.batch_size)
        states = []
        for t in range(source.max_len):
            h, c = self.encoder.step(xp[:, t], h, c)
            states.append(h)
        return T.stack(states, axis=1)

    def context(self, states: Tensor, lengths) -> AttentionResult:
        return last_element_attention(states, lengths)

    def decode(self, v: Tensor, decoder_inputs: np.ndarray, rng=None) -> Tensor:
        x = self._drop(self.tgt_embed(decoder_inputs), rng)
        xp = self.decoder.project_inputs(x)
        h, c = v, self._zeros(v.shape[0])
        outs = []
        for t in range(decoder_inputs.shape[1]):
            h, c = self.decoder.step(xp[:, t], h, c)
            outs.append(h)
        return self.output(self._drop(T.stack(outs, axis=1), rng))

    def logits_from_states(self, states: Tensor, lengths, target: TokenBatch, rng=None) -> Tensor:
        return self.decode(self.context(states, lengths).context, target.decoder_inputs(), rng)

    def forward(self, source, target, rng=None):
        self._check_pair(source, target)
        return self.logits_from_states(self.encoder_states(source, rng), source.lengths, target, rng)

    def start_decoding(self, source):
        v = self.context(self.encoder_states(source), source.lengths).context
        return v, self._zeros(source.batch_size)

    def decode_step(self, state, prev_tokens):
        h, c = state
        h, c = self.decoder(self.tgt_embed(prev_tokens), (h, c))
        return self.output(h), (h, c)
