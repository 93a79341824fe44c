"""Copy-task datasets: corpus sampling, synthetic sequences, vocabulary, batching."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<sos>", "<eos>", "<unk>")


class Vocabulary:
    """Token <-> id map with fixed reserved ids PAD=0, SOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @classmethod
    def build(cls, sentences: Sequence[Sequence[str]]) -> "Vocabulary":
        """Most frequent first, ties broken alphabetically."""
        counts = Counter(tok for s in sentences for tok in s)
        for tok in RESERVED:
            counts.pop(tok, None)
        return cls(sorted(counts, key=lambda t: (-counts[t], t)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:len(RESERVED)]) != RESERVED:
            raise DataError(f"{path}: vocabulary must start with {', '.join(RESERVED)}")
        vocab = cls(lines[len(RESERVED):])
        if len(vocab) != len(lines):
            raise DataError(f"{path}: duplicate tokens in vocabulary file")
        return vocab


def encode(vocab: Vocabulary, sentence: str | Sequence[str]) -> list[int]:
    tokens = sentence.split() if isinstance(sentence, str) else sentence
    return [vocab.stoi.get(tok, UNK) for tok in tokens]


def decode(vocab: Vocabulary, ids: Sequence[int]) -> str:
    """Ids back to text: stops at the first EOS and drops PAD/SOS."""
    out = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, SOS):
            continue
        out.append(vocab.itos[i])
    return " ".join(out)


@dataclass(frozen=True)
class TokenBatch:
    """Padded ``[batch, max_len]`` id matrix; each row ends in EOS at ``lengths - 1``."""

    ids: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], append_eos: bool = True) -> "TokenBatch":
        rows = [list(s) + [EOS] if append_eos else list(s) for s in seqs]
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        ids = np.full((len(rows), int(lengths.max(initial=1))), PAD, dtype=np.int64)
        for i, r in enumerate(rows):
            ids[i, :len(r)] = r
        return cls(ids, lengths)

    @property
    def batch_size(self) -> int:
        return self.ids.shape[0]

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    def sequences(self) -> list[list[int]]:
        """Rows without EOS and padding."""
        return [self.ids[i, :n - 1].tolist() for i, n in enumerate(self.lengths)]

    def decoder_inputs(self) -> np.ndarray:
        """Teacher-forcing inputs: SOS followed by the target shifted right."""
        shifted = np.empty_like(self.ids)
        shifted[:, 0] = SOS
        shifted[:, 1:] = self.ids[:, :-1]
        return shifted


@dataclass(frozen=True)
class CopyDataset:
    """Train/test token sequences; every example's target is its own source."""

    train: tuple[tuple[str, ...], ...]
    test: tuple[tuple[str, ...], ...]

    def save(self, directory: str | Path, vocab: Vocabulary | None = None) -> Vocabulary:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, split in (("train", self.train), ("test", self.test)):
            text = "".join(" ".join(s) + "\n" for s in split)
            (directory / f"{name}.txt").write_text(text, encoding="utf-8")
        vocab = vocab or Vocabulary.build(self.train)
        vocab.save(directory / "vocab.txt")
        return vocab

    @classmethod
    def load(cls, directory: str | Path) -> tuple["CopyDataset", Vocabulary]:
        directory = Path(directory)
        for name in ("train.txt", "test.txt", "vocab.txt"):
            if not (directory / name).is_file():
                raise DataError(f"dataset file not found: {directory / name}")

        def read(name):
            lines = (directory / name).read_text(encoding="utf-8").splitlines()
            return tuple(tuple(line.split()) for line in lines if line.strip())

        return cls(read("train.txt"), read("test.txt")), Vocabulary.load(directory / "vocab.txt")

    def encoded(self, vocab: Vocabulary, split: str) -> list[list[int]]:
        return [encode(vocab, s) for s in getattr(self, split)]


def sample_corpus(path: str | Path, n_train: int, n_test: int, max_words: int,
                  rng: np.random.Generator) -> CopyDataset:
    """Sample distinct whitespace-tokenized sentences of 1..max_words words.

    Duplicate lines are collapsed before sampling, so the splits are disjoint.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"corpus file not found: {path}")
    seen: dict[tuple[str, ...], None] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            toks = tuple(line.split())
            if 1 <= len(toks) <= max_words:
                seen.setdefault(toks)
    pool = list(seen)
    need = n_train + n_test
    if len(pool) < need:
        raise DataError(f"{path}: {len(pool)} distinct sentences of <= {max_words} words, "
                        f"need {need} ({n_train} train + {n_test} test)")
    pick = rng.permutation(len(pool))[:need]
    chosen = [pool[i] for i in pick]
    return CopyDataset(tuple(chosen[:n_train]), tuple(chosen[n_train:]))


def synthetic_tokens(vocab_size: int) -> list[str]:
    return [f"w{i}" for i in range(len(RESERVED), vocab_size)]


def synth_copy(n: int, len_range: tuple[int, int], vocab_size: int, rng: np.random.Generator,
               n_test: int | None = None, max_tries: int = 1000) -> CopyDataset:
    """Uniformly random copy sequences over ``vocab_size - 4`` content tokens.

    ``n`` training sequences plus ``n_test`` (default ``n // 10``) held-out
    sequences that never occur in the training split. Lengths are uniform on
    the inclusive ``len_range``.
    """
    lo, hi = len_range
    if vocab_size <= len(RESERVED):
        raise DataError(f"vocab_size must exceed the {len(RESERVED)} reserved ids")
    if not 1 <= lo <= hi:
        raise DataError(f"bad length range {len_range}")
    n_test = n // 10 if n_test is None else n_test
    words = synthetic_tokens(vocab_size)

    def draw():
        length = int(rng.integers(lo, hi + 1))
        return tuple(words[i] for i in rng.integers(0, len(words), size=length))

    train = tuple(draw() for _ in range(n))
    train_set = set(train)
    test = []
    tries = 0
    while len(test) < n_test:
        s = draw()
        if s in train_set:
            tries += 1
            if tries > max_tries:
                raise DataError("could not draw held-out sequences disjoint from training; "
                                "widen the length range or vocabulary")
            continue
        test.append(s)
    return CopyDataset(train, tuple(test))


def batches(examples: Sequence[Sequence[int]], batch_size: int,
            rng: np.random.Generator | None = None) -> Iterator[tuple[TokenBatch, TokenBatch]]:
    """Yield ``(source, target)`` pairs; shuffled when ``rng`` is given.

    Source and target are the same batch object, which is what the copy task
    means.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        tb = TokenBatch.from_sequences([examples[i] for i in order[start:start + batch_size]])
        yield tb, tb
