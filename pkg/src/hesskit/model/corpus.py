"""Token batches: synthetic generation and the plain-text token-id format.

File format: one sample per line, space-separated integer token ids. Lines
longer than ``seq_len`` are truncated; shorter ones are right-padded with
token 0 (``PAD_ID``). Blank lines and ``#`` comments are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig

PAD_ID = 0


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class TokenBatch:
    """Integer token matrix of shape ``(b, s)``."""

    tokens: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tokens)
        if t.ndim != 2 or t.shape[0] < 1:
            raise CorpusError(f"token batch must be a non-empty (b, s) matrix, got shape {t.shape}")
        if not np.issubdtype(t.dtype, np.integer):
            raise CorpusError("token ids must be integers")
        t = np.ascontiguousarray(t, dtype=np.int64)
        t.setflags(write=False)
        object.__setattr__(self, "tokens", t)

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def __len__(self):
        return self.size

    def rows(self, index) -> "TokenBatch":
        return TokenBatch(self.tokens[index])

    def split(self, sizes) -> list["TokenBatch"]:
        """Consecutive chunks with the given sizes (must sum to ``b``)."""
        sizes = list(sizes)
        if sum(sizes) != self.size or any(n < 1 for n in sizes):
            raise CorpusError(f"chunk sizes {sizes} do not partition a batch of {self.size}")
        bounds = np.cumsum([0] + sizes)
        return [self.rows(slice(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]

    @staticmethod
    def concat(batches) -> "TokenBatch":
        return TokenBatch(np.concatenate([b.tokens for b in batches], axis=0))

    def validate(self, config: ModelConfig) -> None:
        if self.seq_len != config.seq_len:
            raise CorpusError(f"batch sequence length {self.seq_len} != seq_len {config.seq_len}")
        lo, hi = int(self.tokens.min()), int(self.tokens.max())
        if lo < 0 or hi >= config.vocab_size:
            raise CorpusError(f"token ids must lie in [0, {config.vocab_size}), found range [{lo}, {hi}]")


def synthetic_corpus(config: ModelConfig, n_samples: int, seed: int = 0) -> TokenBatch:
    """Uniform random tokens, deterministic in ``seed``."""
    if n_samples < 1:
        raise CorpusError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    return TokenBatch(rng.integers(0, config.vocab_size, size=(n_samples, config.seq_len)))


def parse_corpus(text: str, seq_len: int) -> TokenBatch:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            ids = [int(tok) for tok in line.split()]
        except ValueError:
            raise CorpusError(f"line {lineno}: token ids must be integers") from None
        ids = ids[:seq_len] + [PAD_ID] * max(0, seq_len - len(ids))
        rows.append(ids)
    if not rows:
        raise CorpusError("corpus contains no samples")
    return TokenBatch(np.array(rows, dtype=np.int64))


def load_corpus(path, seq_len: int) -> TokenBatch:
    return parse_corpus(Path(path).read_text(), seq_len)


def format_corpus(batch: TokenBatch) -> str:
    return "".join(" ".join(map(str, row)) + "\n" for row in batch.tokens.tolist())
