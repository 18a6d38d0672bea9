"""Model hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .vocab import N_DURATION, N_VELOCITY, V1_SIZE


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class ModelConfig:
    """Recurrent encoder-decoder settings.

    The defaults are the full-size configuration (about 47M parameters).
    ``mem_len_*`` of ``None`` keeps every previous segment in memory.
    """

    d_model: int = 512
    enc_layers: int = 4
    dec_layers: int = 8
    heads: int = 8
    ffn_size: int = 2048
    dropout: float = 0.1
    max_bars: int = 32
    mem_len_enc: int | None = 512
    mem_len_dec: int | None = 512

    def __post_init__(self) -> None:
        if min(self.d_model, self.heads, self.ffn_size, self.max_bars) <= 0:
            raise InvalidConfig("d_model, heads, ffn_size and max_bars must be positive")
        if min(self.enc_layers, self.dec_layers) < 0:
            raise InvalidConfig("layer counts must be non-negative")
        if self.d_model % self.heads:
            raise InvalidConfig(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        for m in (self.mem_len_enc, self.mem_len_dec):
            if m is not None and m < 0:
                raise InvalidConfig("memory lengths must be non-negative or None")

    @property
    def vocab_sizes(self) -> tuple[int, int, int]:
        return (V1_SIZE, N_VELOCITY, N_DURATION)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
        return cls(**obj)

    def replace(self, **changes) -> ModelConfig:
        return ModelConfig.from_json({**self.to_json(), **changes})


TINY = ModelConfig(d_model=32, enc_layers=1, dec_layers=2, heads=2, ffn_size=64, dropout=0.0, max_bars=32)
