"""Model configuration and its flat ``key=value`` file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

LAYER_KINDS = ("q_proj", "k_proj", "v_proj", "out_proj", "fc1", "fc2")
NONLINEARITIES = ("gelu", "relu")

# short names accepted in config files
_ALIASES = {"B": "blocks", "n": "vocab_size", "s": "seq_len", "heads": "n_heads"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the toy decoder. Defaults are the desk-scale configuration."""

    blocks: int = 2
    n_heads: int = 2
    d_model: int = 16
    d_ffn: int = 64
    vocab_size: int = 128
    seq_len: int = 32
    nonlinearity: str = "gelu"
    seed: int = 0

    def __post_init__(self):
        for name in ("blocks", "n_heads", "d_model", "d_ffn", "vocab_size", "seq_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be at least 2 for next-token prediction")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {NONLINEARITIES}, got {self.nonlinearity!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    @property
    def kinds_per_block(self) -> int:
        return len(LAYER_KINDS)

    @property
    def n_layers(self) -> int:
        return self.blocks * len(LAYER_KINDS)

    def layer_shape(self, l: int) -> tuple[int, int]:
        """``(d_in, d_out)`` of global layer ``l`` (0-based)."""
        kind = LAYER_KINDS[l % len(LAYER_KINDS)]
        if kind == "fc1":
            return (self.d_model, self.d_ffn)
        if kind == "fc2":
            return (self.d_ffn, self.d_model)
        return (self.d_model, self.d_model)

    def layer_name(self, l: int) -> str:
        block, rank = divmod(l, len(LAYER_KINDS))
        return f"block{block + 1}.{LAYER_KINDS[rank]}"

    @property
    def dimension(self) -> int:
        return sum(a * b for a, b in map(self.layer_shape, range(self.n_layers)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            key = _ALIASES.get(key, key)
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "nonlinearity":
                kwargs[key] = str(value).strip().lower()
            else:
                try:
                    kwargs[key] = int(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        return cls(**kwargs)


def parse_config(text: str) -> ModelConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    data = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = value
    return ModelConfig.from_dict(data)


def load_config(path) -> ModelConfig:
    return parse_config(Path(path).read_text())


def format_config(config: ModelConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in config.to_dict().items())
