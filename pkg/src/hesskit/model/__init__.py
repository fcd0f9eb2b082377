"""Miniature decoder-only transformer, perplexity pipeline and subset parametrizations."""

from .config import (
    LAYER_KINDS,
    ConfigError,
    ModelConfig,
    format_config,
    load_config,
    parse_config,
)
from .corpus import (
    PAD_ID,
    CorpusError,
    TokenBatch,
    format_corpus,
    load_corpus,
    parse_corpus,
    synthetic_corpus,
)
from .params import ParamStore, init_params, inverse_reshape, reshape
from .sampling import sample_corpus
from .subsets import (
    AllLayers,
    IndexMap,
    OneKindAllBlocks,
    SingleBlock,
    SingleLayer,
    SubsetError,
    SubsetSpec,
    restricted_loss,
    spec_to_dict,
    subset_dimension,
)
from .transformer import (
    additive_loss,
    additive_loss_from,
    cross_entropy_per_sample,
    forward_logits,
    perplexity,
)

__all__ = [
    "LAYER_KINDS", "PAD_ID", "AllLayers", "ConfigError", "CorpusError", "IndexMap",
    "ModelConfig", "OneKindAllBlocks", "ParamStore", "SingleBlock", "SingleLayer",
    "SubsetError", "SubsetSpec", "TokenBatch", "additive_loss", "additive_loss_from",
    "cross_entropy_per_sample", "format_config", "format_corpus", "forward_logits",
    "init_params", "inverse_reshape", "load_config", "load_corpus", "parse_config",
    "parse_corpus", "perplexity", "reshape", "restricted_loss", "sample_corpus", "spec_to_dict",
    "subset_dimension", "synthetic_corpus",
]
