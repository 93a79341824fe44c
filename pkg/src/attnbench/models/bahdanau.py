"""GRU encoder-decoder with additive attention over bidirectional annotations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..attention import AdditiveScoreParams, AttentionResult, additive_score, attend
from ..data import TokenBatch
from ..tensor import Tensor
from .base import Seq2SeqModel
from .layers import Embedding, GRUCell, Linear


@dataclass
class EncoderOutput:
    states: Tensor       # [B, T, 2H] forward and backward annotations
    initial: Tensor      # [B, H] first decoder state
    mask: np.ndarray     # [B, T] additive key mask


class BahdanauGRU(Seq2SeqModel):
    family = "gru_bahdanau"

    def __init__(self, config, rng, dtype=np.float64):
        super().__init__(config, dtype)
        v, e, h = config.vocab_size, config.embed_dim, config.hidden_dim
        dt = self.dtype
        self.src_embed = Embedding(v, e, rng, dt)
        self.enc_fwd = GRUCell(e, h, rng, dt)
        self.enc_bwd = GRUCell(e, h, rng, dt)
        self.bridge = Linear(2 * h, h, rng, dt)
        self.attn_in = Linear(h + 2 * h, h, rng, dt)
        self.attn_out = Linear(h, 1, rng, dt, bias=False)
        self.tgt_embed = Embedding(v, e, rng, dt)
        self.decoder = GRUCell(e + 2 * h, h, rng, dt)
        self.output = Linear(h + 2 * h + e, v, rng, dt)

    @property
    def scorer(self) -> AdditiveScoreParams:
        # the bias of a linear-to-scalar layer would shift all scores equally, so there is none
        return AdditiveScoreParams(self.attn_in.w, self.attn_in.b, self.attn_out.w)

    def encode(self, source: TokenBatch, rng=None) -> EncoderOutput:
        b, t_max = source.ids.shape
        hdim = self.config.hidden_dim
        x = self._drop(self.src_embed(source.ids), rng)
        zeros = Tensor(np.zeros((b, hdim), dtype=self.dtype))

        xp = self.enc_fwd.project_inputs(x)
        h, fwd = zeros, []
        for t in range(t_max):
            h = self.enc_fwd.step(xp[:, t], h)
            fwd.append(h)
        fwd_states = T.stack(fwd, axis=1)
        last = np.asarray(source.lengths) - 1
        fwd_final = fwd_states[np.arange(b), last]

        # right-to-left pass: padded steps leave the state untouched
        xp = self.enc_bwd.project_inputs(x)
        h, bwd = zeros, [None] * t_max
        for t in reversed(range(t_max)):
            h_new = self.enc_bwd.step(xp[:, t], h)
            live = t < np.asarray(source.lengths)
            if live.all():
                h = h_new
            else:
                h = h + Tensor(live.astype(self.dtype)[:, None]) * (h_new - h)
            bwd[t] = h
        states = T.concat([fwd_states, T.stack(bwd, axis=1)], axis=-1)
        initial = T.tanh(self.bridge(T.concat([fwd_final, bwd[0]], axis=-1)))
        return EncoderOutput(states, initial, self.source_mask(source))

    def attention(self, s_prev: Tensor, enc: EncoderOutput) -> AttentionResult:
        scores = additive_score(s_prev, enc.states, self.scorer) + Tensor(enc.mask)
        return attend(enc.states, scores)

    def step(self, s_prev: Tensor, emb: Tensor, enc: EncoderOutput):
        att = self.attention(s_prev, enc)
        s = self.decoder(T.concat([emb, att.context], axis=-1), s_prev)
        return s, att, T.concat([s, att.context, emb], axis=-1)

    def forward(self, source, target, rng=None, trace: list | None = None):
        """Teacher-forced logits; with ``trace`` each step's previous state,
        attention weights and context are appended as numpy arrays."""
        self._check_pair(source, target)
        enc = self.encode(source, rng)
        emb = self._drop(self.tgt_embed(target.decoder_inputs()), rng)
        s, feats = enc.initial, []
        for t in range(target.max_len):
            s_prev = s
            s, att, feat = self.step(s_prev, emb[:, t], enc)
            feats.append(feat)
            if trace is not None:
                trace.append({"s_prev": s_prev.data, "weights": att.weights.data,
                              "context": att.context.data})
        return self.output(self._drop(T.stack(feats, axis=1), rng))

    def start_decoding(self, source):
        enc = self.encode(source)
        return enc, enc.initial

    def decode_step(self, state, prev_tokens):
        enc, s = state
        s, _, feat = self.step(s, self.tgt_embed(prev_tokens), enc)
        return self.output(feat), (enc, s)
