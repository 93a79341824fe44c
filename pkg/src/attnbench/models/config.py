"""Per-family hyperparameters with paper-scale and desk-scale presets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigError

FAMILIES = ("lstm_plain", "gru_bahdanau", "conv_s2s", "transformer")
SCALES = ("paper", "desk")


@dataclass(frozen=True)
class ModelConfig:
    family: str
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    n_layers: int = 1
    n_heads: int = 1
    ffn_dim: int = 0
    kernel_size: int = 3
    max_positions: int = 100
    dropout_p: float = 0.0
    max_decode_len: int = 20

    def validate(self) -> "ModelConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; choose from {FAMILIES}")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "n_layers", "max_decode_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.vocab_size <= 4:
            raise ConfigError("vocab_size must exceed the 4 reserved ids")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p {self.dropout_p} outside [0, 1)")
        if self.family in ("lstm_plain", "gru_bahdanau") and self.n_layers != 1:
            raise ConfigError(f"{self.family} supports a single recurrent layer")
        if self.family == "transformer":
            if self.embed_dim != self.hidden_dim:
                raise ConfigError("transformer needs embed_dim == hidden_dim (the model width)")
            if self.n_heads < 1 or self.hidden_dim % self.n_heads:
                raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by "
                                  f"{self.n_heads} heads")
            if self.ffn_dim < 1:
                raise ConfigError("transformer needs ffn_dim >= 1")
        if self.family == "conv_s2s":
            if self.kernel_size < 1:
                raise ConfigError("kernel_size must be >= 1")
            if self.max_positions < self.max_decode_len + 1:
                raise ConfigError(f"max_positions {self.max_positions} cannot hold "
                                  f"{self.max_decode_len} decoded tokens")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "ModelConfig":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise ConfigError(f"unknown model config keys: {sorted(bad)}")
        return replace(self, **kw)


_PAPER = {
    "lstm_plain": dict(embed_dim=256, hidden_dim=512, dropout_p=0.5),
    "gru_bahdanau": dict(embed_dim=256, hidden_dim=512, dropout_p=0.5),
    "conv_s2s": dict(embed_dim=256, hidden_dim=512, n_layers=10, kernel_size=3,
                     max_positions=100, dropout_p=0.25),
    "transformer": dict(embed_dim=512, hidden_dim=512, n_layers=6, n_heads=8,
                        ffn_dim=2048, dropout_p=0.1),
}

_DESK = {
    "lstm_plain": dict(embed_dim=32, hidden_dim=64, dropout_p=0.5),
    "gru_bahdanau": dict(embed_dim=32, hidden_dim=64, dropout_p=0.5),
    "conv_s2s": dict(embed_dim=32, hidden_dim=64, n_layers=4, kernel_size=3,
                     max_positions=100, dropout_p=0.25),
    "transformer": dict(embed_dim=64, hidden_dim=64, n_layers=2, n_heads=4,
                        ffn_dim=256, dropout_p=0.1),
}


def preset(family: str, scale: str, vocab_size: int) -> ModelConfig:
    """Preset hyperparameters for ``family`` at ``scale`` ("paper" or "desk")."""
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {SCALES}")
    table = _PAPER if scale == "paper" else _DESK
    if family not in table:
        raise ConfigError(f"unknown model family {family!r}; choose from {FAMILIES}")
    decode_len = 40 if scale == "paper" else 20
    return ModelConfig(family=family, vocab_size=vocab_size, max_decode_len=decode_len,
                       **table[family]).validate()
