"""Encoder blocks against hand-stepped oracles, plus masking and variant behavior."""

import math

import numpy as np
import pytest

from conftest import tiny_model_config
from mtxplain.encoder import (
    EncoderConfig,
    VARIANTS,
    bigru_encode,
    encode,
    init_encoder_params,
    segment_cnn,
    segment_level_mask,
    self_attention,
    subsentence_average,
)
from mtxplain.errors import ConfigError, DataError, ShapeError
from mtxplain.model import Model
from mtxplain.tensor import Tensor


def scalar_gru_params(prefix="g.fwd"):
    """Hand-chosen scalar weights for a 1-unit, 1-input recurrence."""
    vals = {
        "update_in": 0.5, "update_rec": 0.25, "update_bias": 0.1,
        "reset_in": -0.3, "reset_rec": 0.2, "reset_bias": 0.0,
        "cand_in": 0.8, "cand_rec": -0.5, "cand_bias": 0.05,
    }
    return {f"{prefix}.{k}": Tensor([[v]], requires_grad=True) for k, v in vals.items()}


def sigma(x):
    return 1.0 / (1.0 + math.exp(-x))


def hand_gru_step(e, h, p):
    z = sigma(p["update_in"] * e + p["update_rec"] * h + p["update_bias"])
    r = sigma(p["reset_in"] * e + p["reset_rec"] * h + p["reset_bias"])
    cand = math.tanh(p["cand_in"] * e + p["cand_rec"] * (r * h) + p["cand_bias"])
    return (1.0 - z) * h + z * cand


class TestGru:
    def test_two_steps_match_hand_recurrence(self):
        params = scalar_gru_params()
        raw = {k.split(".")[-1]: v.data[0, 0] for k, v in params.items()}
        inputs = [1.0, -0.5]
        h = 0.0
        expected = []
        for e in inputs:
            h = hand_gru_step(e, h, raw)
            expected.append(h)

        both = dict(params)
        both.update(scalar_gru_params("g.bwd"))
        out = bigru_encode(Tensor([[1.0], [-0.5]]), [1, 1], both, "g")
        np.testing.assert_allclose(out.data[:, 0], expected, atol=1e-12)

    def test_backward_direction_mirrors_forward(self):
        # same weights both ways: the backward state at row t equals the
        # forward state computed on the reversed sequence
        params = dict(scalar_gru_params("g.fwd"))
        params.update(scalar_gru_params("g.bwd"))
        seq = Tensor([[0.3], [1.0], [-0.7]])
        out = bigru_encode(seq, [1, 1, 1], params, "g")
        flipped = bigru_encode(Tensor(seq.data[::-1].copy()), [1, 1, 1], params, "g")
        np.testing.assert_allclose(out.data[:, 1], flipped.data[::-1, 0], atol=1e-12)

    def test_zero_weights_give_zero_states(self):
        params = {k: Tensor(np.zeros_like(v.data)) for k, v in
                  {**scalar_gru_params("g.fwd"), **scalar_gru_params("g.bwd")}.items()}
        out = bigru_encode(Tensor([[1.0], [2.0]]), [1, 1], params, "g")
        assert not out.data.any()

    def test_masked_steps_carry_state(self):
        params = dict(scalar_gru_params("g.fwd"))
        params.update(scalar_gru_params("g.bwd"))
        seq = Tensor([[1.0], [99.0], [-0.5]])
        out = bigru_encode(seq, [1, 0, 1], params, "g")
        # the skipped middle row repeats the state before it (forward half)
        assert out.data[1, 0] == out.data[0, 0]
        # and the backward half carries the later state across the hole
        assert out.data[1, 1] == out.data[2, 1]

    def test_empty_sequence_rejected(self):
        params = dict(scalar_gru_params("g.fwd"))
        params.update(scalar_gru_params("g.bwd"))
        with pytest.raises(DataError):
            bigru_encode(Tensor(np.zeros((0, 1))), [], params, "g")

    def test_output_width_is_twice_hidden(self):
        rng = np.random.default_rng(0)
        params = {}
        from mtxplain.encoder import _add_bigru
        _add_bigru(params, rng, "g", 3, 5)
        out = bigru_encode(Tensor(rng.standard_normal((4, 3))), [1, 1, 1, 1], params, "g")
        assert out.data.shape == (4, 10)


def attention_params(wq, wk, wv, dim_in, dim_out, prefix="a"):
    def as_tensor(m):
        return Tensor(np.asarray(m, dtype=np.float64), requires_grad=True)

    return {
        f"{prefix}.query_w": as_tensor(wq), f"{prefix}.query_b": as_tensor(np.zeros((1, dim_out))),
        f"{prefix}.key_w": as_tensor(wk), f"{prefix}.key_b": as_tensor(np.zeros((1, dim_out))),
        f"{prefix}.value_w": as_tensor(wv), f"{prefix}.value_b": as_tensor(np.zeros((1, dim_out))),
    }


class TestSelfAttention:
    def test_single_row_returns_its_value(self):
        rng = np.random.default_rng(1)
        wq, wk, wv = (rng.standard_normal((3, 3)) for _ in range(3))
        params = attention_params(wq, wk, wv, 3, 3)
        h = Tensor(rng.standard_normal((1, 3)))
        out = self_attention(h, [1], params, "a")
        np.testing.assert_allclose(out.data, h.data @ wv, atol=1e-12)

    def test_zero_scores_average_values(self):
        wv = np.eye(2)
        params = attention_params(np.zeros((2, 2)), np.zeros((2, 2)), wv, 2, 2)
        h = Tensor([[1.0, 3.0], [5.0, 7.0]])
        out = self_attention(h, [1, 1], params, "a")
        np.testing.assert_allclose(out.data, [[3.0, 5.0], [3.0, 5.0]], atol=1e-12)

    def test_hand_worked_two_rows(self):
        h = np.array([[1.0, 0.0], [0.0, 2.0]])
        wq = np.array([[1.0, 0.0], [0.0, 1.0]])
        wk = np.array([[0.5, 0.0], [0.0, 0.5]])
        wv = np.array([[1.0, 2.0], [3.0, 4.0]])
        q, k, v = h @ wq, h @ wk, h @ wv
        scores = q @ k.T
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = e / e.sum(axis=1, keepdims=True)
        expected = weights @ v
        params = attention_params(wq, wk, wv, 2, 2)
        out = self_attention(Tensor(h), [1, 1], params, "a")
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_weights_are_row_stochastic(self):
        # identity input with identity value projection makes V the identity,
        # so the output rows are the attention weights themselves
        rng = np.random.default_rng(2)
        n = 4
        params = attention_params(rng.standard_normal((n, n)),
                                  rng.standard_normal((n, n)), np.eye(n), n, n)
        out = self_attention(Tensor(np.eye(n)), [1, 1, 1, 1], params, "a")
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(n), atol=1e-9)
        assert np.all(out.data >= -1e-12)

    def test_masked_columns_get_zero_weight(self):
        rng = np.random.default_rng(3)
        n = 4
        params = attention_params(rng.standard_normal((n, n)),
                                  rng.standard_normal((n, n)), np.eye(n), n, n)
        out = self_attention(Tensor(np.eye(n)), [1, 1, 0, 1], params, "a")
        assert (out.data[:, 2] == 0.0).all()

    def test_all_masked_rejected(self):
        params = attention_params(np.eye(2), np.eye(2), np.eye(2), 2, 2)
        with pytest.raises(DataError):
            self_attention(Tensor(np.ones((2, 2))), [0, 0], params, "a")


class TestSubsentenceAverage:
    def test_plain_means(self):
        x = Tensor([[1.0], [3.0], [5.0], [7.0]])
        out = subsentence_average(x, 2)
        assert out.data.ravel().tolist() == [2.0, 6.0]

    def test_masked_mean_ignores_dead_rows(self):
        x = Tensor([[1.0], [3.0], [5.0], [7.0]])
        out = subsentence_average(x, 2, mask=[1, 0, 0, 0])
        assert out.data.ravel().tolist() == [1.0, 0.0]

    def test_bad_segment_length(self):
        with pytest.raises(ConfigError):
            subsentence_average(Tensor(np.ones((5, 2))), 2)

    def test_permutation_inside_segment_only_local(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 3))
        shuffled = x.copy()
        shuffled[[0, 1, 2]] = shuffled[[2, 0, 1]]  # permute first segment only
        a = subsentence_average(Tensor(x), 3).data
        b = subsentence_average(Tensor(shuffled), 3).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_single_segment_is_global_mean(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 2))
        out = subsentence_average(Tensor(x), 4)
        np.testing.assert_allclose(out.data, x.mean(axis=0, keepdims=True), atol=1e-12)


class TestSegmentCnn:
    def params_identity(self, prefix="c"):
        # one k=1 pass-through filter per input channel
        filters = np.zeros((2, 1, 2))
        filters[0, 0, 0] = 1.0
        filters[1, 0, 1] = 1.0
        return {f"{prefix}.filters": Tensor(filters),
                f"{prefix}.bias": Tensor(np.zeros((1, 2)))}

    def test_identity_filter_reduces_to_masked_max(self):
        x = Tensor([[1.0, -2.0], [4.0, 0.5], [2.0, 9.0], [3.0, 1.0]])
        out = segment_cnn(x, [1, 1, 1, 1], self.params_identity(), "c", 2)
        # relu then segment max of the raw (nonnegative wins)
        assert out.data.tolist() == [[4.0, 0.5], [3.0, 9.0]]

    def test_masked_rows_do_not_win(self):
        x = Tensor([[1.0, 1.0], [50.0, 50.0], [2.0, 2.0], [3.0, 3.0]])
        out = segment_cnn(x, [1, 0, 1, 1], self.params_identity(), "c", 2)
        assert out.data[0].tolist() == [1.0, 1.0]

    def test_window_sums_neighbors(self):
        filters = np.ones((1, 3, 1))
        params = {"c.filters": Tensor(filters), "c.bias": Tensor(np.zeros((1, 1)))}
        x = Tensor([[1.0], [1.0], [1.0], [1.0]])
        out = segment_cnn(x, [1, 1, 1, 1], params, "c", 4)
        # interior windows see three ones
        assert out.data[0, 0] == 3.0


class TestSegmentLevelMask:
    def test_basic(self):
        out = segment_level_mask(np.array([1, 1, 0, 0, 0, 0]), 2)
        assert out.tolist() == [1.0, 0.0, 0.0]

    def test_partial_segment_counts(self):
        out = segment_level_mask(np.array([0, 1, 0, 0]), 2)
        assert out.tolist() == [1.0, 0.0]


class TestEncoderConfig:
    def test_validation(self):
        cfg = EncoderConfig(embed_dim=4, segment_len=3, max_len=8)
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg2 = EncoderConfig(embed_dim=4, filters=7, attention_dim=9)
        with pytest.raises(ConfigError):
            cfg2.validate()
        with pytest.raises(ConfigError):
            EncoderConfig(embed_dim=4, variant="transformer").validate()

    def test_variant_widths_cover_all(self):
        for variant in VARIANTS:
            cfg = EncoderConfig(embed_dim=4, hidden_dim=3, attention_dim=5,
                                filters=5, segment_len=2, max_len=4, variant=variant)
            assert cfg.sentence_width > 0 and cfg.rationale_width > 0


class TestEncode:
    def tiny(self, variant="mexcb"):
        return EncoderConfig(embed_dim=5, hidden_dim=4, attention_dim=6, filters=6,
                             window=3, segment_len=4, max_len=8, variant=variant)

    def test_full_variant_shapes(self):
        cfg = self.tiny()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        views = encode(rng.standard_normal((8, 5)), np.ones(8), cfg, params)
        assert views.word_hidden.data.shape == (8, 8)
        assert views.word_attended.data.shape == (8, 6)
        assert views.segment_recurrent.data.shape == (2, 6)
        assert views.segment_conv.data.shape == (2, 6)
        assert views.segment_embedding.data.shape == (2, 6)
        assert views.sentence_recurrent.data.shape == (1, 6)
        assert views.sentence_conv.data.shape == (1, 6)
        assert views.sentence_vector.data.shape == (1, 12)

    def test_each_variant_sentence_width(self):
        rng_data = np.random.default_rng(2)
        x = rng_data.standard_normal((8, 5))
        mask = np.ones(8)
        for variant in VARIANTS:
            cfg = self.tiny(variant)
            params = init_encoder_params(cfg, np.random.default_rng(0))
            views = encode(x, mask, cfg, params)
            assert views.sentence_vector.data.shape == (1, cfg.sentence_width), variant
            assert views.rationale_features.data.shape == (1, cfg.rationale_width)

    def test_wrong_input_shape(self):
        cfg = self.tiny()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            encode(np.zeros((4, 5)), np.ones(4), cfg, params)

    def test_all_masked_rejected(self):
        cfg = self.tiny()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        with pytest.raises(DataError):
            encode(np.zeros((8, 5)), np.zeros(8), cfg, params)

    def test_single_token_is_finite(self):
        cfg = self.tiny()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        x = np.zeros((8, 5))
        x[0] = 1.0
        mask = np.zeros(8)
        mask[0] = 1
        views = encode(x, mask, cfg, params)
        assert np.all(np.isfinite(views.sentence_vector.data))
        # stage-one outputs for dead segments are exactly zero
        assert not views.segment_embedding.data[1].any()

    def test_garbage_in_padding_cannot_leak(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((8, 5))
        x[5:] = 0.0
        mask = np.zeros(8)
        mask[:5] = 1
        dirty = x.copy()
        dirty[5:] = 1e6
        for variant in VARIANTS:
            cfg = self.tiny(variant)
            params = init_encoder_params(cfg, np.random.default_rng(0))
            clean_views = encode(x, mask, cfg, params)
            dirty_views = encode(dirty, mask, cfg, params)
            diff = np.abs(clean_views.sentence_vector.data
                          - dirty_views.sentence_vector.data).max()
            assert diff == 0.0, variant

    def test_sentence_vector_independent_of_window_length(self):
        # the same live tokens padded into longer windows encode identically,
        # because no encoder parameter depends on the window length
        rng = np.random.default_rng(4)
        tokens = rng.standard_normal((5, 5))
        short_cfg = self.tiny()
        long_cfg = EncoderConfig(embed_dim=5, hidden_dim=4, attention_dim=6,
                                 filters=6, window=3, segment_len=4, max_len=16)
        params = init_encoder_params(short_cfg, np.random.default_rng(0))

        short_x = np.zeros((8, 5))
        short_x[:5] = tokens
        short_mask = np.zeros(8)
        short_mask[:5] = 1
        long_x = np.zeros((16, 5))
        long_x[:5] = tokens
        long_mask = np.zeros(16)
        long_mask[:5] = 1

        a = encode(short_x, short_mask, short_cfg, params).sentence_vector.data
        b = encode(long_x, long_mask, long_cfg, params).sentence_vector.data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_zeroed_convolution_reduces_full_to_recurrent_variant(self):
        full_cfg = self.tiny("mexcb")
        full_params = init_encoder_params(full_cfg, np.random.default_rng(7))
        for name, p in full_params.items():
            if "conv" in name:
                p.data = np.zeros_like(p.data)
        gru_cfg = self.tiny("mexcb_gru")
        gru_params = {k: v for k, v in full_params.items() if "conv" not in k}

        rng = np.random.default_rng(8)
        x = rng.standard_normal((8, 5))
        mask = np.ones(8)
        full_views = encode(x, mask, full_cfg, full_params)
        gru_views = encode(x, mask, gru_cfg, gru_params)
        np.testing.assert_allclose(full_views.sentence_recurrent.data,
                                   gru_views.sentence_recurrent.data, atol=1e-12)

    def test_birnn_reads_final_states(self):
        cfg = self.tiny("birnn")
        params = init_encoder_params(cfg, np.random.default_rng(9))
        rng = np.random.default_rng(10)
        x = rng.standard_normal((8, 5))
        x[6:] = 0
        mask = np.concatenate([np.ones(6), np.zeros(2)])
        views = encode(x, mask, cfg, params)
        h = cfg.hidden_dim
        # trailing pads carry the last live forward state to the final row
        np.testing.assert_array_equal(views.sentence_vector.data[0, :h],
                                      views.word_hidden.data[5, :h])
        np.testing.assert_array_equal(views.sentence_vector.data[0, h:],
                                      views.word_hidden.data[0, h:])


class TestEncoderDeterminism:
    def test_init_is_seed_deterministic(self):
        cfg = EncoderConfig(embed_dim=4, hidden_dim=3, attention_dim=5, filters=5,
                            segment_len=2, max_len=4)
        a = init_encoder_params(cfg, np.random.default_rng(11))
        b = init_encoder_params(cfg, np.random.default_rng(11))
        assert sorted(a) == sorted(b)
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_model_params_superset_for_shared_names(self):
        # the recurrent-only variant's parameters all exist in the full model
        full = Model(tiny_model_config("mexcb"))
        slim = Model(tiny_model_config("mexcb_gru"))
        missing = [k for k in slim.params if "conv" not in k and k not in full.params]
        assert missing == []
