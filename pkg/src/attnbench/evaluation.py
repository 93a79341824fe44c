"""Sentence BLEU that ignores end-of-sentence padding, perplexity, test-set reports."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from . import tensor as T
from .data import EOS, PAD, CopyDataset, Vocabulary, batches
from .errors import ConfigError
from .tensor import no_grad

SMOOTHING_EPS = 0.1
MAX_ORDER = 4
IGNORED = frozenset({PAD, EOS, "<pad>", "<eos>"})


def _strip(tokens: Sequence[Hashable], ignore) -> list:
    return [t for t in tokens if t not in ignore]


def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[Hashable], reference: Sequence[Hashable],
         ignore=IGNORED, max_order: int = MAX_ORDER, eps: float = SMOOTHING_EPS) -> float:
    """Sentence-level BLEU in [0, 1].

    EOS and PAD tokens are removed from both sides first, so trailing EOS
    runs cannot inflate the score. Orders run up to ``min(max_order,
    len(candidate))``; an order with no clipped matches contributes
    ``eps / total`` instead of zero.
    """
    cand = _strip(candidate, ignore)
    ref = _strip(reference, ignore)
    if not cand:
        return 0.0
    order = min(max_order, len(cand))
    log_p = 0.0
    for n in range(1, order + 1):
        c_counts, r_counts = _ngrams(cand, n), _ngrams(ref, n)
        total = sum(c_counts.values())
        match = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        log_p += math.log((match if match else eps) / total)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return bp * math.exp(log_p / order)


def perplexity(mean_loss: float) -> float:
    try:
        return math.exp(mean_loss)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class EvalReport:
    avg_bleu: float
    test_loss: float
    perplexity: float
    n_examples: int

    CSV_HEADER = "test_loss,test_ppl,avg_bleu,n_examples"

    def csv_row(self) -> str:
        return f"{self.test_loss:.6g},{self.perplexity:.6g},{self.avg_bleu:.6g},{self.n_examples}"


def teacher_forced_loss(model, examples: Sequence[Sequence[int]], batch_size: int = 100) -> float:
    """Token-averaged cross-entropy (EOS included, padding excluded), no dropout."""
    total, count = 0.0, 0
    with no_grad(), model.evaluating():
        for src, tgt in batches(examples, batch_size):
            logits = model.forward(src, tgt)
            n = int(tgt.lengths.sum())
            total += float(T.cross_entropy(logits, tgt.ids, ignore_id=PAD).data) * n
            count += n
    return total / count


def average_bleu(model, examples: Sequence[Sequence[int]], batch_size: int = 100,
                 max_len: int | None = None) -> float:
    scores = []
    for src, _ in batches(examples, batch_size):
        out = model.greedy_decode(src, max_len)
        for hyp, ref in zip(out.sequences(), src.sequences()):
            scores.append(bleu(hyp, ref))
    return float(np.mean(scores))


def evaluate(model, test: CopyDataset | Sequence[Sequence[int]], vocab: Vocabulary | None = None,
             batch_size: int = 100) -> EvalReport:
    """Teacher-forced loss and perplexity plus mean greedy-decode BLEU.

    ``test`` is either a dataset (its test split is encoded with ``vocab``)
    or already-encoded id sequences.
    """
    if isinstance(test, CopyDataset):
        if vocab is None:
            raise ConfigError("evaluate needs the vocabulary to encode a CopyDataset")
        examples = test.encoded(vocab, "test")
    else:
        examples = [list(s) for s in test]
    if vocab is not None and len(vocab) != model.config.vocab_size:
        raise ConfigError(f"model vocabulary {model.config.vocab_size} != dataset vocabulary "
                          f"{len(vocab)}")
    if not examples:
        raise ConfigError("evaluate needs at least one test example")
    loss = teacher_forced_loss(model, examples, batch_size)
    return EvalReport(average_bleu(model, examples, batch_size), loss, perplexity(loss),
                      len(examples))
