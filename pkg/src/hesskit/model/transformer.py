"""Decoder forward pass and the perplexity pipeline.

The forward pass is written once against :mod:`hesskit.autodiff.ops`, so the
same code evaluates eagerly on arrays or records itself when some layer
matrices are :class:`~hesskit.autodiff.Var` handles.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from .config import LAYER_KINDS
from .corpus import TokenBatch
from .params import ParamStore

LN_EPS = 1e-5


def _causal_mask(s: int) -> np.ndarray:
    return np.tril(np.ones((s, s), dtype=bool))


def _attention(params: ParamStore, block: int, weights, x, mask):
    cfg = params.config
    b, s = x.shape[0], x.shape[1]
    H, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    base = block * len(LAYER_KINDS)
    wq, wk, wv, wo = (weights[base + r] for r in range(4))
    bq, bk, bv, bo = (params.biases[base + r] for r in range(4))

    def heads(t):
        return ops.transpose(ops.reshape(t, (b, s, H, dh)), (0, 2, 1, 3))

    q = heads(ops.mul(ops.add(ops.matmul(x, wq), bq), 1.0 / np.sqrt(dh)))
    k = heads(ops.add(ops.matmul(x, wk), bk))
    v = heads(ops.add(ops.matmul(x, wv), bv))
    scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2)))
    attn = ops.softmax(scores, mask=mask)
    ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b, s, cfg.d_model))
    return ops.add(ops.matmul(ctx, wo), bo)


def _ffn(params: ParamStore, block: int, weights, x):
    base = block * len(LAYER_KINDS)
    act = ops.gelu if params.config.nonlinearity == "gelu" else ops.relu
    h = act(ops.add(ops.matmul(x, weights[base + 4]), params.biases[base + 4]))
    return ops.add(ops.matmul(h, weights[base + 5]), params.biases[base + 5])


def _logits(params: ParamStore, weights, tokens: np.ndarray):
    cfg = params.config
    s = tokens.shape[1]
    mask = _causal_mask(s)
    x = params.embed[tokens] + params.positions[:s]
    g, c = params.ln_gain, params.ln_bias
    for i in range(cfg.blocks):
        x = ops.add(x, _attention(params, i, weights, ops.layer_norm(x, g[2 * i], c[2 * i], LN_EPS), mask))
        x = ops.add(x, _ffn(params, i, weights, ops.layer_norm(x, g[2 * i + 1], c[2 * i + 1], LN_EPS)))
    x = ops.layer_norm(x, g[-1], c[-1], LN_EPS)
    return ops.matmul(x, np.ascontiguousarray(params.unembed.T))


def _per_sample_ce(logits, tokens: np.ndarray):
    """Mean next-token negative log-likelihood over positions ``0..s-2`` per sample."""
    b, s = tokens.shape
    targets = np.zeros_like(tokens)
    targets[:, :-1] = tokens[:, 1:]
    nll = ops.sub(ops.logsumexp(logits), ops.take_last(logits, targets))
    weight = np.full(s, 1.0 / (s - 1))
    weight[-1] = 0.0
    return ops.sum(ops.mul(nll, weight), axis=1)


def _check(params: ParamStore, X: TokenBatch) -> np.ndarray:
    if not isinstance(X, TokenBatch):
        X = TokenBatch(np.asarray(X))
    X.validate(params.config)
    return X.tokens


def forward_logits(params: ParamStore, X: TokenBatch) -> np.ndarray:
    """Logits of shape ``(b, s, vocab_size)``; position ``j`` sees tokens ``<= j`` only."""
    return _logits(params, params.layers, _check(params, X))


def cross_entropy_per_sample(logits, X: TokenBatch) -> np.ndarray:
    tokens = X.tokens if isinstance(X, TokenBatch) else np.asarray(X)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[:2] != tokens.shape:
        raise ValueError(f"logits shape {logits.shape} does not match tokens {tokens.shape}")
    return _per_sample_ce(logits, tokens)


def perplexity(c) -> float:
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ValueError("perplexity of an empty batch is undefined")
    return float(np.exp(np.mean(c)))


def additive_loss_from(params: ParamStore, weights, tokens: np.ndarray):
    """Sum of per-sample cross-entropies with explicit layer matrices (arrays or Vars)."""
    return ops.sum(_per_sample_ce(_logits(params, weights, tokens), tokens))


def additive_loss(params: ParamStore, X: TokenBatch) -> float:
    """Per-sample cross-entropies summed: no batch mean, no exponential."""
    return float(additive_loss_from(params, params.layers, _check(params, X)))
