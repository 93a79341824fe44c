"""The interface every encoder-decoder family implements."""
from __future__ import annotations

from typing import Any

import numpy as np

from .. import tensor as T
from ..data import EOS, SOS, TokenBatch
from ..errors import ConfigError, DimensionError, VocabularyError
from ..tensor import Tensor, no_grad
from .config import ModelConfig
from .layers import Module


class Seq2SeqModel(Module):
    """Common surface: teacher-forced logits and greedy decoding.

    Subclasses implement :meth:`forward`, :meth:`start_decoding` and
    :meth:`decode_step`. Dropout is active only in training mode and then
    needs an explicit ``rng``.
    """

    family = ""

    def __init__(self, config: ModelConfig, dtype=np.float64):
        self.config = config.validate()
        if config.family != self.family:
            raise ConfigError(f"{type(self).__name__} cannot build family {config.family!r}")
        self.dtype = np.dtype(dtype)

    # -- helpers -----------------------------------------------------------
    def _drop(self, x: Tensor, rng) -> Tensor:
        return T.dropout(x, self.config.dropout_p, self.training, rng)

    def _check_ids(self, batch: TokenBatch) -> None:
        ids = batch.ids
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise VocabularyError(f"token id {int(ids.max())} outside vocabulary of size "
                                  f"{self.config.vocab_size}")

    def _check_pair(self, source: TokenBatch, target: TokenBatch) -> None:
        if source.batch_size != target.batch_size:
            raise DimensionError(f"source batch {source.batch_size} vs target batch "
                                 f"{target.batch_size}")
        self._check_ids(source)
        self._check_ids(target)

    def source_mask(self, source: TokenBatch) -> np.ndarray:
        from ..attention import key_padding_mask
        return key_padding_mask(source.lengths, source.max_len, self.dtype)

    # -- interface ---------------------------------------------------------
    def forward(self, source: TokenBatch, target: TokenBatch, rng=None) -> Tensor:
        """Logits ``[batch, target_len, vocab]``; position t predicts ``target.ids[:, t]``."""
        raise NotImplementedError

    def start_decoding(self, source: TokenBatch) -> Any:
        raise NotImplementedError

    def decode_step(self, state: Any, prev_tokens: np.ndarray) -> tuple[Tensor, Any]:
        """Logits ``[batch, vocab]`` for the next token given the previous one."""
        raise NotImplementedError

    def greedy_decode(self, source: TokenBatch, max_len: int | None = None) -> TokenBatch:
        """Argmax decoding from SOS until EOS or ``max_len`` content tokens.

        Every returned row ends with EOS, including rows cut off at ``max_len``.
        """
        max_len = self.config.max_decode_len if max_len is None else max_len
        if max_len < 1:
            raise ConfigError("max_len must be >= 1")
        self._check_ids(source)
        b = source.batch_size
        out: list[list[int]] = [[] for _ in range(b)]
        done = np.zeros(b, dtype=bool)
        prev = np.full(b, SOS, dtype=np.int64)
        with no_grad(), self.evaluating():
            state = self.start_decoding(source)
            for _ in range(max_len):
                logits, state = self.decode_step(state, prev)
                nxt = logits.data.argmax(axis=-1)
                for i in np.nonzero(~done)[0]:
                    if nxt[i] == EOS:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
                if done.all():
                    break
                prev = nxt
        return TokenBatch.from_sequences(out)
