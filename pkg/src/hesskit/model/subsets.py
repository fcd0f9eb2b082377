"""Parameter subsets and the losses restricted to them.

A subset takes the first ``t`` flattened entries of each selected layer. The
restricted vector is ordered block-major, then by layer kind, then by flat
offset. All indices here are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ScalarFunction, ops
from .config import LAYER_KINDS, ModelConfig
from .corpus import TokenBatch
from .params import ParamStore
from .transformer import additive_loss_from


class SubsetError(ValueError):
    pass


@dataclass(frozen=True)
class SingleLayer:
    layer: int
    t: int
    kind_name = "single-layer"


@dataclass(frozen=True)
class SingleBlock:
    block: int
    t: int
    kind_name = "block"


@dataclass(frozen=True)
class OneKindAllBlocks:
    kind: str
    t: int
    kind_name = "kind-all-blocks"


@dataclass(frozen=True)
class AllLayers:
    t: int
    kind_name = "all-layers"


SubsetSpec = SingleLayer | SingleBlock | OneKindAllBlocks | AllLayers


def selected_layers(spec: SubsetSpec, config: ModelConfig) -> list[int]:
    k = len(LAYER_KINDS)
    if isinstance(spec, SingleLayer):
        if not 0 <= spec.layer < config.n_layers:
            raise SubsetError(f"layer index {spec.layer} out of range [0, {config.n_layers})")
        return [spec.layer]
    if isinstance(spec, SingleBlock):
        if not 0 <= spec.block < config.blocks:
            raise SubsetError(f"block index {spec.block} out of range [0, {config.blocks})")
        return [spec.block * k + r for r in range(k)]
    if isinstance(spec, OneKindAllBlocks):
        if spec.kind not in LAYER_KINDS:
            raise SubsetError(f"unknown layer kind {spec.kind!r}; expected one of {LAYER_KINDS}")
        rank = LAYER_KINDS.index(spec.kind)
        return [i * k + rank for i in range(config.blocks)]
    if isinstance(spec, AllLayers):
        return list(range(config.n_layers))
    raise SubsetError(f"not a subset spec: {spec!r}")


def subset_dimension(spec: SubsetSpec, config: ModelConfig) -> int:
    return spec.t * len(selected_layers(spec, config))


def spec_to_dict(spec: SubsetSpec) -> dict:
    out = {"subset": spec.kind_name, "t": spec.t}
    if isinstance(spec, SingleLayer):
        out["layer"] = spec.layer
    elif isinstance(spec, SingleBlock):
        out["block"] = spec.block
    elif isinstance(spec, OneKindAllBlocks):
        out["kind"] = spec.kind
    return out


@dataclass(frozen=True)
class IndexMap:
    """For each restricted coordinate: the global layer index and the flat offset inside it."""

    layer: np.ndarray
    offset: np.ndarray

    def __len__(self):
        return len(self.layer)

    @classmethod
    def for_spec(cls, spec: SubsetSpec, config: ModelConfig) -> "IndexMap":
        layers = selected_layers(spec, config)
        for l in layers:
            d_in, d_out = config.layer_shape(l)
            if not isinstance(spec.t, (int, np.integer)) or not 1 <= spec.t <= d_in * d_out:
                raise SubsetError(
                    f"t={spec.t} out of range [1, {d_in * d_out}] for {config.layer_name(l)}")
        layer = np.repeat(np.array(layers, dtype=np.int64), spec.t)
        offset = np.tile(np.arange(spec.t, dtype=np.int64), len(layers))
        return cls(layer, offset)

    def groups(self):
        """``(layer, flat offsets, positions in u)`` per layer, in first-appearance order."""
        order = list(dict.fromkeys(self.layer.tolist()))
        for l in order:
            pos = np.flatnonzero(self.layer == l)
            yield l, self.offset[pos], pos

    def gather(self, params: ParamStore) -> np.ndarray:
        """Current parameter values at the mapped coordinates."""
        return np.array([params.layers[l].reshape(-1)[o]
                         for l, o in zip(self.layer.tolist(), self.offset.tolist())],
                        dtype=np.float64)

    def labels(self, config: ModelConfig, one_based: bool = True) -> list[str]:
        base = 1 if one_based else 0
        out = []
        for l, o in zip(self.layer.tolist(), self.offset.tolist()):
            d_out = config.layer_shape(l)[1]
            r, c = divmod(o, d_out)
            out.append(f"{config.layer_name(l)}[{r + base}][{c + base}]")
        return out


def restricted_loss(params: ParamStore, spec: SubsetSpec, X: TokenBatch):
    """Additive loss as a function of the subset only; returns ``(ScalarFunction, IndexMap)``.

    The function scatters its argument into copies of the selected layers;
    every other parameter stays at its ``params`` value.
    """
    index_map = IndexMap.for_spec(spec, params.config)
    if not isinstance(X, TokenBatch):
        X = TokenBatch(np.asarray(X))
    X.validate(params.config)
    tokens = X.tokens
    groups = list(index_map.groups())

    def build(u):
        weights = list(params.layers)
        for l, offsets, pos in groups:
            weights[l] = ops.scatter(params.layers[l], u, offsets, pos)
        return additive_loss_from(params, weights, tokens)

    name = f"{spec.kind_name}(t={spec.t}) b={X.size}"
    return ScalarFunction(build, len(index_map), name), index_map
