import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesskit.autodiff import evaluate
from hesskit.model import (
    LAYER_KINDS,
    AllLayers,
    ConfigError,
    CorpusError,
    IndexMap,
    ModelConfig,
    OneKindAllBlocks,
    SingleBlock,
    SingleLayer,
    SubsetError,
    TokenBatch,
    additive_loss,
    cross_entropy_per_sample,
    format_config,
    format_corpus,
    forward_logits,
    init_params,
    inverse_reshape,
    load_corpus,
    parse_config,
    parse_corpus,
    perplexity,
    reshape,
    restricted_loss,
    sample_corpus,
    subset_dimension,
    synthetic_corpus,
)

import oracle_forward

# Frozen from the engine after agreeing with tests/oracle_forward.py
# (logits to 1.7e-14 absolute, loss to 1.4e-16 relative).
GOLDEN_LOSS = 52.344968911729424
GOLDEN_CE = [12.35073081419404, 13.86130632981558, 12.632731262088143, 13.50020050563166]
GOLDEN_LOGIT_SUM = 3099.2299199329254
GOLDEN_LOGIT_ABS_SUM = 52800.38508653679
GOLDEN_LOGITS_000 = [1.0630103188021143, -5.638384033895561, 3.2932604588308805]
GOLDEN_PPL = 482261.71744987235


# configuration and parameters -------------------------------------------------

def test_default_dimension(config):
    assert config.n_layers == 12
    assert config.dimension == 2 * (4 * 256 + 2 * 1024) == 6144
    assert init_params(config).dimension == 6144


def test_layer_order_and_shapes(config):
    assert LAYER_KINDS == ("q_proj", "k_proj", "v_proj", "out_proj", "fc1", "fc2")
    assert config.layer_shape(4) == (16, 64)
    assert config.layer_shape(5) == (64, 16)
    assert config.layer_name(6) == "block2.q_proj"


def test_init_is_deterministic(config):
    a, b = init_params(config), init_params(config)
    c = init_params(ModelConfig(seed=1))
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.layers, b.layers))
    assert a.embed.tobytes() == b.embed.tobytes()
    assert any(x.tobytes() != y.tobytes() for x, y in zip(a.layers, c.layers))


def test_params_are_read_only(params):
    with pytest.raises(ValueError):
        params.layers[0][0, 0] = 1.0


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=15, n_heads=2)
    with pytest.raises(ConfigError):
        ModelConfig(nonlinearity="tanh")
    with pytest.raises(ConfigError):
        ModelConfig(seq_len=1)


def test_config_text_round_trip():
    cfg = ModelConfig(blocks=1, d_ffn=32, nonlinearity="relu", seed=3)
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config("# toy\nB = 3\nn=64\n") == ModelConfig(blocks=3, vocab_size=64)
    with pytest.raises(ConfigError):
        parse_config("depth=3")
    with pytest.raises(ConfigError):
        parse_config("blocks")


# reshape operators ---------------------------------------------------------------

def test_reshape_round_trip_example():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(reshape(W), [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(inverse_reshape(reshape(W), W.shape), W)


def test_reshape_zero():
    assert np.linalg.norm(reshape(np.zeros((3, 5)))) == 0.0


def test_reshape_preserves_norm_all_layers(params):
    rng = np.random.default_rng(3)
    W = rng.normal(size=(3, 5))
    assert abs(np.linalg.norm(reshape(W)) - np.linalg.norm(W, "fro")) < 1e-15 * np.linalg.norm(W)
    for W in params.layers:
        assert inverse_reshape(reshape(W), W.shape).tobytes() == W.tobytes()
        assert abs(np.linalg.norm(reshape(W)) - np.linalg.norm(W, "fro")) <= 1e-15 * np.linalg.norm(W)


# forward pass and loss -------------------------------------------------------------

def test_logits_match_oracle_and_golden(params, batch):
    z = forward_logits(params, batch)
    assert z.shape == (4, 32, 128)
    np.testing.assert_allclose(z, oracle_forward.logits(params, batch.tokens), rtol=0, atol=1e-12)
    assert z.sum() == pytest.approx(GOLDEN_LOGIT_SUM, rel=1e-12)
    assert np.abs(z).sum() == pytest.approx(GOLDEN_LOGIT_ABS_SUM, rel=1e-12)
    np.testing.assert_allclose(z[0, 0, :3], GOLDEN_LOGITS_000, rtol=1e-12)


def test_relu_variant_matches_oracle():
    cfg = ModelConfig(nonlinearity="relu", seed=5)
    p = init_params(cfg)
    X = synthetic_corpus(cfg, 3, seed=2)
    np.testing.assert_allclose(forward_logits(p, X), oracle_forward.logits(p, X.tokens), atol=1e-12)


def test_loss_golden(params, batch):
    c = cross_entropy_per_sample(forward_logits(params, batch), batch)
    np.testing.assert_allclose(c, GOLDEN_CE, rtol=1e-12)
    np.testing.assert_allclose(c, oracle_forward.per_sample_ce(forward_logits(params, batch), batch.tokens),
                               rtol=1e-12)
    L = additive_loss(params, batch)
    assert L == pytest.approx(GOLDEN_LOSS, rel=1e-12)
    assert L == pytest.approx(oracle_forward.additive_loss(params, batch.tokens), rel=1e-12)
    assert perplexity(c) == pytest.approx(GOLDEN_PPL, rel=1e-12)
    assert perplexity(c) == pytest.approx(math.exp(L / batch.size), rel=1e-12)


def test_per_sample_independence(params, batch):
    other = TokenBatch(np.stack([batch.tokens[0], synthetic_corpus(params.config, 1, 9).tokens[0]]))
    a = forward_logits(params, batch)
    b = forward_logits(params, other)
    np.testing.assert_array_equal(a[0], b[0])


def test_permutation_equivariance(params, batch):
    perm = [2, 0, 3, 1]
    z = forward_logits(params, batch)
    zp = forward_logits(params, batch.rows(perm))
    np.testing.assert_allclose(zp, z[perm], atol=1e-13)


def test_causality(params, batch):
    z = forward_logits(params, batch)
    for j in (0, 5, 31):
        t = batch.tokens.copy()
        t[1, j] = (t[1, j] + 1) % params.config.vocab_size
        zj = forward_logits(params, TokenBatch(t))
        np.testing.assert_array_equal(zj[1, :j], z[1, :j])
        assert not np.array_equal(zj[1, j:], z[1, j:])


def test_uniform_logits_give_log_vocab():
    X = TokenBatch(np.array([[3, 1, 4, 1, 5]]))
    c = cross_entropy_per_sample(np.zeros((1, 5, 16)), X)
    assert c[0] == pytest.approx(math.log(16), rel=1e-15)


def test_large_margin_drives_loss_to_zero():
    X = TokenBatch(np.array([[3, 1, 4, 1, 5]]))
    prev = np.inf
    for M in (1.0, 10.0, 40.0):
        z = np.zeros((1, 5, 8))
        for j in range(4):
            z[0, j, X.tokens[0, j + 1]] = M
        c = cross_entropy_per_sample(z, X)[0]
        assert c < prev
        prev = c
    assert prev < 1e-15


def test_perplexity_examples():
    assert perplexity([math.log(4), math.log(4)]) == pytest.approx(4.0, rel=1e-15)
    assert perplexity([0.0, 0.0, 0.0]) == 1.0
    with pytest.raises(ValueError):
        perplexity([])


def test_single_sample_additive_loss(params, batch):
    one = batch.rows(slice(0, 1))
    assert additive_loss(params, one) == cross_entropy_per_sample(forward_logits(params, one), one)[0]


@settings(max_examples=15, deadline=None)
@given(cut=st.integers(1, 5), seed=st.integers(0, 1000))
def test_additivity_over_concatenation(params, cut, seed):
    X = synthetic_corpus(params.config, 6, seed)
    X1, X2 = X.split([cut, 6 - cut])
    total = additive_loss(params, X)
    assert abs(total - additive_loss(params, X1) - additive_loss(params, X2)) < 1e-12 * abs(total)


def test_batch_validation(params):
    with pytest.raises(CorpusError):
        forward_logits(params, TokenBatch(np.zeros((1, 5), dtype=int)))
    with pytest.raises(CorpusError):
        forward_logits(params, TokenBatch(np.full((1, 32), 128)))
    with pytest.raises(CorpusError):
        TokenBatch(np.zeros((2, 3)))


# corpus files ------------------------------------------------------------------------

def test_corpus_round_trip(tmp_path):
    X = synthetic_corpus(ModelConfig(), 3, seed=4)
    path = tmp_path / "c.txt"
    path.write_text(format_corpus(X))
    assert np.array_equal(load_corpus(path, 32).tokens, X.tokens)


def test_corpus_truncate_and_pad():
    X = parse_corpus("# comment\n1 2 3 4 5\n\n7 8\n", seq_len=3)
    np.testing.assert_array_equal(X.tokens, [[1, 2, 3], [7, 8, 0]])
    with pytest.raises(CorpusError):
        parse_corpus("1 x 3\n", 3)
    with pytest.raises(CorpusError):
        parse_corpus("\n", 3)


def test_model_sampled_corpus_is_deterministic(params):
    a = sample_corpus(params, 3, seed=1)
    b = sample_corpus(params, 3, seed=1)
    assert a.tokens.shape == (3, 32)
    assert np.array_equal(a.tokens, b.tokens)
    a.validate(params.config)


# subset parametrizations ----------------------------------------------------------------

SPECS = [SingleLayer(3, 10), SingleBlock(1, 7), OneKindAllBlocks("fc1", 9), AllLayers(2)]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind_name)
def test_restriction_consistency(params, batch, spec):
    f, imap = restricted_loss(params, spec, batch)
    assert evaluate(f, imap.gather(params)) == additive_loss(params, batch)


@pytest.mark.parametrize("spec,expected", [
    (SingleLayer(0, 5), 5), (SingleBlock(1, 5), 30), (OneKindAllBlocks("q_proj", 5), 10),
    (AllLayers(2), 24)], ids=["layer", "block", "kind", "all"])
def test_dimension_law(config, spec, expected):
    assert subset_dimension(spec, config) == expected
    assert len(IndexMap.for_spec(spec, config)) == expected


def test_first_row_of_first_query(config, params):
    imap = IndexMap.for_spec(SingleLayer(0, config.d_model), config)
    np.testing.assert_array_equal(imap.layer, 0)
    np.testing.assert_array_equal(imap.offset, np.arange(16))
    np.testing.assert_array_equal(imap.gather(params), params.layer(0, "q_proj")[0])
    assert imap.labels(config)[:2] == ["block1.q_proj[1][1]", "block1.q_proj[1][2]"]


def test_index_map_is_block_major(config):
    imap = IndexMap.for_spec(OneKindAllBlocks("v_proj", 2), config)
    np.testing.assert_array_equal(imap.layer, [2, 2, 8, 8])
    np.testing.assert_array_equal(imap.offset, [0, 1, 0, 1])


def test_perturbation_inside_and_outside(params, batch):
    # the restricted function reads the full parameters only through the index map
    f, imap = restricted_loss(params, SingleLayer(0, 4), batch)
    base = evaluate(f, imap.gather(params))
    for offset, inside in ((10, False), (2, True)):
        layers = [W.copy() for W in params.layers]
        layers[0].reshape(-1)[offset] += 1e-3
        moved = params.with_layers(layers)
        value = evaluate(f, imap.gather(moved))
        assert (value != base) == inside
        if inside:
            assert value == additive_loss(moved, batch)


def test_subset_errors(config):
    with pytest.raises(SubsetError):
        IndexMap.for_spec(SingleLayer(0, 257), config)
    with pytest.raises(SubsetError):
        IndexMap.for_spec(SingleLayer(12, 1), config)
    with pytest.raises(SubsetError):
        IndexMap.for_spec(OneKindAllBlocks("gate", 1), config)
    with pytest.raises(SubsetError):
        IndexMap.for_spec(SingleBlock(0, 0), config)
