"""Corpora sampled from the model's own next-token distribution."""

from __future__ import annotations

import numpy as np

from .corpus import CorpusError, TokenBatch
from .params import ParamStore
from .transformer import _logits


def sample_corpus(params: ParamStore, n_samples: int, seed: int = 0,
                  temperature: float = 1.0) -> TokenBatch:
    """Autoregressive samples: first token uniform, then ``x_j ~ softmax(logits_{j-1} / T)``.

    On such a corpus the model is calibrated, so per-sample curvature is far
    less noisy than on uniform random tokens.
    """
    if n_samples < 1:
        raise CorpusError("n_samples must be positive")
    if temperature <= 0:
        raise CorpusError("temperature must be positive")
    cfg = params.config
    rng = np.random.default_rng(seed)
    tokens = np.zeros((n_samples, cfg.seq_len), dtype=np.int64)
    tokens[:, 0] = rng.integers(0, cfg.vocab_size, size=n_samples)
    for j in range(1, cfg.seq_len):
        z = _logits(params, params.layers, tokens[:, :j])[:, j - 1] / temperature
        p = np.exp(z - z.max(axis=1, keepdims=True))
        cdf = np.cumsum(p / p.sum(axis=1, keepdims=True), axis=1)
        u = rng.random(n_samples)
        tokens[:, j] = np.minimum((cdf < u[:, None]).sum(axis=1), cfg.vocab_size - 1)
    return TokenBatch(tokens)
