"""The four encoder-decoder families behind one interface."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .bahdanau import BahdanauGRU
from .base import Seq2SeqModel
from .config import FAMILIES, SCALES, ModelConfig, preset
from .convs2s import ConvS2S, GatedConv, conv_block
from .layers import (
    Embedding,
    GRUCell,
    LayerNorm,
    Linear,
    LSTMCell,
    Module,
    positional_representation,
    sinusoidal_encoding,
)
from .sutskever import SutskeverLSTM
from .transformer import Transformer

REGISTRY = {
    "lstm_plain": SutskeverLSTM,
    "gru_bahdanau": BahdanauGRU,
    "conv_s2s": ConvS2S,
    "transformer": Transformer,
}


def build(config: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> Seq2SeqModel:
    config.validate()
    try:
        cls = REGISTRY[config.family]
    except KeyError:
        raise ConfigError(f"unknown model family {config.family!r}") from None
    return cls(config, rng, dtype)


def forward_teacher_forced(model: Seq2SeqModel, source, target, rng=None):
    return model.forward(source, target, rng)


def greedy_decode(model: Seq2SeqModel, source, max_len: int | None = None):
    return model.greedy_decode(source, max_len)


def parameter_count(model: Module) -> int:
    return sum(p.size for p in model.parameters())


def lstm_cell(x, state, cell: LSTMCell):
    return cell(x, state)


def gru_cell(x, state, cell: GRUCell):
    return cell(x, state)


__all__ = [
    "FAMILIES", "SCALES", "REGISTRY", "ModelConfig", "preset", "build", "Seq2SeqModel",
    "SutskeverLSTM", "BahdanauGRU", "ConvS2S", "Transformer", "GatedConv", "conv_block",
    "Module", "Linear", "Embedding", "LayerNorm", "LSTMCell", "GRUCell",
    "positional_representation", "sinusoidal_encoding", "forward_teacher_forced",
    "greedy_decode", "parameter_count", "lstm_cell", "gru_cell",
]
