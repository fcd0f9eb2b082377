"""Parameter storage and the fixed flattening of layer matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import LAYER_KINDS, ModelConfig


def reshape(W) -> np.ndarray:
    """Flatten a layer matrix row-major."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {W.shape}")
    return W.reshape(-1).copy()


def inverse_reshape(w, shape) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    shape = tuple(shape)
    if w.ndim != 1 or len(shape) != 2 or w.size != shape[0] * shape[1]:
        raise ValueError(f"cannot reshape vector of shape {w.shape} into {shape}")
    return w.reshape(shape).copy()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParamStore:
    """Layer matrices ``W_l`` (block-major, kinds in ``LAYER_KINDS`` order) plus frozen extras.

    Only ``layers`` enter the Hessian coordinates. Token embeddings, the output
    table, positions, biases and layer-norm parameters are constants.
    """

    config: ModelConfig
    layers: tuple
    biases: tuple
    embed: np.ndarray
    unembed: np.ndarray
    positions: np.ndarray
    ln_gain: np.ndarray   # (2 * blocks + 1, d_model)
    ln_bias: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dimension(self) -> int:
        return sum(W.size for W in self.layers)

    def layer(self, block: int, kind: str) -> np.ndarray:
        return self.layers[block * len(LAYER_KINDS) + LAYER_KINDS.index(kind)]

    def flat(self) -> np.ndarray:
        """All layer matrices concatenated in the fixed order."""
        return np.concatenate([W.reshape(-1) for W in self.layers])

    def with_layers(self, layers) -> "ParamStore":
        layers = tuple(_frozen(W) for W in layers)
        for old, new in zip(self.layers, layers):
            if old.shape != new.shape:
                raise ValueError(f"layer shape {new.shape} does not match {old.shape}")
        return ParamStore(self.config, layers, self.biases, self.embed,
                          self.unembed, self.positions, self.ln_gain, self.ln_bias)


def init_params(config: ModelConfig) -> ParamStore:
    """Deterministic initialization from ``config.seed``.

    Weights ~ N(0, 1/d_in), biases ~ N(0, 0.02^2), token embeddings ~ N(0, 0.2^2),
    positions ~ N(0, 0.1^2), output table ~ N(0, 1); layer norms start at gain 1, bias 0.
    """
    rng = np.random.default_rng(config.seed)
    layers, biases = [], []
    for l in range(config.n_layers):
        d_in, d_out = config.layer_shape(l)
        layers.append(_frozen(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out))))
        biases.append(_frozen(rng.normal(0.0, 0.02, size=d_out)))
    embed = _frozen(rng.normal(0.0, 0.2, size=(config.vocab_size, config.d_model)))
    positions = _frozen(rng.normal(0.0, 0.1, size=(config.seq_len, config.d_model)))
    unembed = _frozen(rng.normal(0.0, 1.0, size=(config.vocab_size, config.d_model)))
    n_norms = 2 * config.blocks + 1
    return ParamStore(
        config=config,
        layers=tuple(layers),
        biases=tuple(biases),
        embed=embed,
        unembed=unembed,
        positions=positions,
        ln_gain=_frozen(np.ones((n_norms, config.d_model))),
        ln_bias=_frozen(np.zeros((n_norms, config.d_model))),
    )
