import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurowave import autograd as ag
from neurowave.model import (
    OPTIMAL_CONFIG, SEARCH_SPACE, Batch, ModelConfig, ModelError, forward, glorot_bound,
    init_params, make_batch, param_shapes, positional_encoding, predict_proba,
)


def random_features(rng, lengths):
    return [rng.normal(2.0, 1.0, size=(n, 5, 5)) for n in lengths]


def expected_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count, written independently of param_shapes."""
    c, k, d, f, n = (cfg.cnn_out_channels, cfg.kernel_size, cfg.embed_dim, cfg.ffn_hidden,
                     cfg.n_transformer_layers)
    conv = c * 25 * k + c
    proj = d * c + d
    attention = 4 * d * d + 3 * d  # q, k, v, o weights; q, v, o biases
    ffn = f * d + f + d * f + d
    norms = 2 * 2 * d
    return conv + proj + n * (attention + ffn + norms) + 2 * d + 3 * d + 3


class TestConfig:
    def test_optimal_values(self):
        assert dataclasses.astuple(OPTIMAL_CONFIG) == (8, 5, 4, 128, 4, 64, 8, 0.1, 5e-4)
        assert OPTIMAL_CONFIG.in_search_space()

    def test_dict_round_trip(self):
        assert ModelConfig.from_dict(OPTIMAL_CONFIG.to_dict()) == OPTIMAL_CONFIG

    def test_unknown_field(self):
        with pytest.raises(ModelError, match="unknown"):
            ModelConfig.from_dict({"depth": 3})

    def test_guards(self):
        with pytest.raises(ModelError):
            ModelConfig(kernel_size=4)
        with pytest.raises(ModelError):
            ModelConfig(dropout=1.0)
        with pytest.raises(ModelError):
            ModelConfig(n_heads=3, embed_dim=32).check_divisible()

    def test_search_space_all_divisible(self):
        for d in SEARCH_SPACE["embed_dim"]:
            for h in SEARCH_SPACE["n_heads"]:
                assert d % h == 0


class TestInit:
    def test_deterministic(self):
        a, b = init_params(OPTIMAL_CONFIG, 3), init_params(OPTIMAL_CONFIG, 3)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a.tensors)
        c = init_params(OPTIMAL_CONFIG, 4)
        assert not np.array_equal(a["conv.weight"].data, c["conv.weight"].data)

    def test_glorot_bounds_and_biases(self):
        params = init_params(OPTIMAL_CONFIG, 0)
        for name, t in params.tensors.items():
            if name.endswith(".gain"):
                assert np.all(t.data == 1)
            elif t.data.ndim == 1:
                assert np.all(t.data == 0)
            else:
                bound = glorot_bound(t.shape)
                assert np.all(np.abs(t.data) <= bound)
                # a uniform draw fills most of its range
                assert np.abs(t.data).max() > 0.8 * bound

    def test_glorot_formula(self):
        assert glorot_bound((64, 8)) == pytest.approx(np.sqrt(6 / 72))
        assert glorot_bound((8, 25, 5)) == pytest.approx(np.sqrt(6 / (125 + 40)))

    def test_indivisible_rejected(self):
        with pytest.raises(ModelError):
            init_params(ModelConfig(n_heads=8, embed_dim=36))


class TestParameterCount:
    def test_optimal(self):
        assert init_params(OPTIMAL_CONFIG).count() == expected_count(OPTIMAL_CONFIG) == 135539

    @pytest.mark.parametrize("cfg", [ModelConfig(16, 3, 2, 256, 8, 32, 32, 0.3, 1e-3),
                                     ModelConfig(8, 3, 4, 256, 8, 64, 16, 0.1, 1e-3)])
    def test_formula_matches(self, cfg):
        assert init_params(cfg).count() == expected_count(cfg)

    def test_independent_of_training_knobs(self):
        base = init_params(OPTIMAL_CONFIG).count()
        for change in ({"batch_size": 32}, {"learning_rate": 1e-3}, {"dropout": 0.3}):
            assert init_params(dataclasses.replace(OPTIMAL_CONFIG, **change)).count() == base

    def test_names_unique_and_ordered(self):
        shapes = param_shapes(OPTIMAL_CONFIG)
        names = list(shapes)
        assert names[0] == "conv.weight" and names[-1] == "head.bias"
        assert "layer0.attn.bk" not in shapes


class TestForward:
    def test_logits_shape_finite(self, rng):
        params = init_params(OPTIMAL_CONFIG, 1)
        batch = make_batch(random_features(rng, [10, 7, 3]), labels=[0, 1, 2])
        logits = forward(params, batch)
        assert logits.shape == (3, 3)
        assert np.all(np.isfinite(logits.data))

    def test_probabilities(self, rng):
        params = init_params(OPTIMAL_CONFIG, 1)
        p = predict_proba(params, make_batch(random_features(rng, [5, 9]), labels=[0, 0]))
        assert np.allclose(p.sum(axis=1), 1, atol=1e-12)

    def test_padding_invariance(self, rng):
        params = init_params(OPTIMAL_CONFIG, 2)
        short = random_features(rng, [4])
        alone = forward(params, make_batch(short, labels=[0])).data[0]
        for other in (6, 11, 30):
            padded = forward(params, make_batch(short + random_features(rng, [other]), labels=[0, 0])).data[0]
            assert np.max(np.abs(alone - padded)) < 1e-9

    def test_padding_content_ignored(self, rng):
        params = init_params(OPTIMAL_CONFIG, 2)
        feats = random_features(rng, [8, 8])
        batch = make_batch(feats, labels=[0, 1])
        batch.mask[0, 5:] = False
        ref = forward(params, batch).data
        batch.features[0, 5:] = rng.normal(size=(3, 5, 5)) * 100
        assert np.max(np.abs(forward(params, batch).data - ref)) < 1e-9

    def test_eval_deterministic(self, rng):
        params = init_params(OPTIMAL_CONFIG, 2)
        batch = make_batch(random_features(rng, [6, 6]), labels=[0, 1])
        assert np.array_equal(forward(params, batch).data, forward(params, batch).data)

    def test_dropout_seeded(self, rng):
        params = init_params(OPTIMAL_CONFIG, 2)
        batch = make_batch(random_features(rng, [6, 6]), labels=[0, 1])
        a = forward(params, batch, train=True, seed=5).data
        assert np.array_equal(a, forward(params, batch, train=True, seed=5).data)
        assert not np.array_equal(a, forward(params, batch, train=True, seed=6).data)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
    def test_batch_permutation_equivariance(self, seed, n):
        rng = np.random.default_rng(seed)
        params = init_params(ModelConfig(8, 3, 2, 32, 4, 16, 8, 0.1, 1e-3), seed)
        feats = random_features(rng, rng.integers(1, 9, n))
        perm = rng.permutation(n)
        out = forward(params, make_batch(feats, labels=[0] * n)).data
        out_perm = forward(params, make_batch([feats[i] for i in perm], labels=[0] * n)).data
        assert np.allclose(out[perm], out_perm, rtol=0, atol=1e-9)

    def test_batch_validation(self):
        with pytest.raises(ModelError):
            Batch(np.zeros((1, 3, 5, 4)), np.ones((1, 3)), [0])
        with pytest.raises(ModelError):
            Batch(np.zeros((1, 3, 5, 5)), np.zeros((1, 3)), [0])
        with pytest.raises(ModelError):
            make_batch([np.zeros((3, 4, 5))], labels=[0])

    def test_positional_encoding(self):
        pe = positional_encoding(50, 64)
        assert pe.shape == (50, 64)
        assert np.array_equal(pe[0, 0::2], np.zeros(32)) and np.array_equal(pe[0, 1::2], np.ones(32))
        assert pe[3, 2] == pytest.approx(np.sin(3 / 10000 ** (2 / 64)))


@pytest.mark.parametrize("seed", range(3))
def test_full_model_gradient(tiny_config, seed):
    rng = np.random.default_rng(seed)
    params = init_params(tiny_config, seed)
    for t in params.values():
        # move off the symmetric init so no gradient is trivially zero
        if t.data.ndim == 1:
            t.data[:] = rng.normal(1.0 if t.name.endswith(".gain") else 0.0, 0.3, t.shape)
    batch = make_batch(random_features(rng, [3, 2]), labels=[0, 2])

    def loss(_):
        return ag.softmax_cross_entropy(forward(params, batch), batch.labels)

    worst = max(ag.finite_difference_check(loss, t) for t in params.values())
    assert worst < 1e-4
