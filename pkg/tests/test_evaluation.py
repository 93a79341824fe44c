import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnbench import tensor as T
from attnbench.data import EOS, PAD, TokenBatch, Vocabulary, synth_copy
from attnbench.errors import ConfigError
from attnbench.evaluation import EvalReport, average_bleu, bleu, evaluate, perplexity
from attnbench.models import Seq2SeqModel, build
from conftest import small_config

tokens = st.lists(st.integers(4, 9), min_size=0, max_size=12)


class TestBleu:
    def test_identity(self):
        assert bleu([4, 5, 6, 7, 8], [4, 5, 6, 7, 8]) == 1.0

    def test_disjoint(self):
        assert bleu([4, 5, 6, 7], [8, 9, 10, 11]) < 0.11

    @pytest.mark.parametrize("k", range(6))
    def test_trailing_eos_neutral(self, k):
        ref = [4, 5, 6, 7, 8]
        assert bleu(ref + [EOS] * k, ref) == bleu(ref, ref) == 1.0
        cand = [4, 9, 6, 7]
        assert bleu(cand + [EOS] * k, ref) == bleu(cand, ref)

    def test_padding_ignored(self):
        assert bleu([4, 5, EOS, PAD, PAD], [4, 5]) == 1.0

    def test_empty_candidate(self):
        assert bleu([], [4, 5]) == 0.0
        assert bleu([EOS, EOS], [4, 5]) == 0.0

    def test_short_candidate_uses_available_orders(self):
        assert bleu([4, 5], [4, 5]) == 1.0

    def test_hand_value(self):
        # 1-gram 3/4, 2-gram 1/3, 3-gram eps/2, 4-gram eps/1; equal lengths
        cand, ref = [4, 5, 6, 9], [4, 5, 7, 6]
        expect = math.exp((math.log(3 / 4) + math.log(1 / 3) + math.log(0.05) + math.log(0.1)) / 4)
        assert bleu(cand, ref) == pytest.approx(expect, abs=1e-12)

    def test_brevity_penalty(self):
        assert bleu([4, 5, 6], [4, 5, 6, 7, 8, 9]) == pytest.approx(math.exp(1 - 2), abs=1e-12)

    def test_string_tokens(self):
        assert bleu("a b c <eos>".split(), "a b c".split()) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(tokens, tokens, st.integers(0, 5))
    def test_eos_invariance_and_range(self, cand, ref, k):
        b = bleu(cand, ref)
        assert 0.0 <= b <= 1.0
        assert bleu(cand + [EOS] * k, ref) == b

    @settings(max_examples=100, deadline=None)
    @given(tokens, tokens, st.permutations(list(range(4, 10))))
    def test_renaming_symmetry(self, cand, ref, perm):
        rename = dict(zip(range(4, 10), perm))
        assert bleu([rename[t] for t in cand], [rename[t] for t in ref]) == bleu(cand, ref)

    def test_one_only_for_exact_copies_up_to_seven_tokens(self):
        # beyond seven tokens distinct sequences can share every 1..4-gram count
        for n in range(1, 6):
            seqs = list(itertools.product((4, 5, 6), repeat=n))
            for a in seqs:
                for b in seqs:
                    assert (bleu(a, b) == 1.0) == (a == b)
        for a in itertools.product((4, 5), repeat=7):
            for b in itertools.product((4, 5), repeat=7):
                if a != b:
                    assert bleu(a, b) < 1.0


class TestPerplexity:
    def test_values(self, rng):
        assert perplexity(0.0) == 1.0
        assert perplexity(math.log(7)) == pytest.approx(7.0, rel=1e-12)
        x = float(rng.uniform(0, 5))
        assert abs(math.log(perplexity(x)) - x) < 1e-12

    def test_overflow_is_inf(self):
        assert perplexity(1e4) == math.inf


class Copier(Seq2SeqModel):
    """Rigged model: logits are a scaled one-hot of the source, so it copies perfectly."""
    family = "lstm_plain"

    def __init__(self, vocab, uniform=False):
        super().__init__(small_config("lstm_plain", vocab=vocab))
        self.uniform = uniform

    def forward(self, source, target, rng=None):
        return T.Tensor(self._logits(target.ids))

    def _logits(self, ids):
        v = self.config.vocab_size
        out = np.zeros(ids.shape + (v,))
        if not self.uniform:
            out[..., :] = -50.0
            np.put_along_axis(out, ids[..., None], 50.0, axis=-1)
        return out

    def start_decoding(self, source):
        return source.ids, 0

    def decode_step(self, state, prev_tokens):
        ids, t = state
        col = ids[:, t] if t < ids.shape[1] else np.full(ids.shape[0], EOS)
        return T.Tensor(self._logits(col)), (ids, t + 1)


class TestEvaluate:
    def dataset(self, rng):
        ds = synth_copy(60, (2, 6), 11, rng, n_test=15)
        return ds, Vocabulary.build(ds.train)

    def test_perfect_copier(self, rng):
        ds, vocab = self.dataset(rng)
        report = evaluate(Copier(len(vocab)), ds, vocab)
        assert report.avg_bleu == 1.0 and report.n_examples == 15
        assert report.test_loss < 1e-10

    def test_uniform_model(self, rng):
        ds, vocab = self.dataset(rng)
        report = evaluate(Copier(len(vocab), uniform=True), ds, vocab)
        assert report.perplexity == pytest.approx(len(vocab), rel=1e-12)
        assert abs(report.perplexity - math.exp(report.test_loss)) < 1e-9

    def test_vocabulary_mismatch(self, rng):
        ds, vocab = self.dataset(rng)
        with pytest.raises(ConfigError):
            evaluate(Copier(len(vocab) + 1), ds, vocab)

    def test_deterministic(self, rng):
        ds, vocab = self.dataset(rng)
        m = build(small_config("transformer", vocab=len(vocab), dropout_p=0.5), rng)
        m.train()
        a, b = evaluate(m, ds, vocab), evaluate(m, ds, vocab)
        assert a == b
        assert m.training  # evaluation restores the previous mode

    def test_bleu_in_range(self, rng):
        ds, vocab = self.dataset(rng)
        m = build(small_config("gru_bahdanau", vocab=len(vocab)), rng)
        assert 0.0 <= average_bleu(m, ds.encoded(vocab, "test")) <= 1.0

    def test_csv_row(self):
        r = EvalReport(0.5, 1.25, math.exp(1.25), 10)
        assert EvalReport.CSV_HEADER.count(",") == r.csv_row().count(",")
        assert r.csv_row().startswith("1.25,")

    def test_batching_does_not_change_result(self, rng):
        ds, vocab = self.dataset(rng)
        m = build(small_config("conv_s2s", vocab=len(vocab)), rng)
        a = evaluate(m, ds, vocab, batch_size=4)
        b = evaluate(m, ds, vocab, batch_size=100)
        assert a.avg_bleu == b.avg_bleu
        assert a.test_loss == pytest.approx(b.test_loss, rel=1e-12)


def test_greedy_decode_rows_end_with_eos(rng):
    m = Copier(12)
    src = TokenBatch.from_sequences([[4, 5, 6], [7]])
    assert m.greedy_decode(src).sequences() == [[4, 5, 6], [7]]
