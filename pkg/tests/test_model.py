"""Forward-pass contracts: feature layout, attention range, pooling,
memory walk, enhancement, variants, and the quadratic foil."""
import math

import numpy as np
import pytest

from samnet import kernels as K
from samnet.encoder import BehaviorEvent, BehaviorSequence, VocabConfig
from samnet.errors import ConfigError, ShapeError
from samnet.gru import GruParams
from samnet.instrument import Meter
from samnet.model import (AttentionParams, SamConfig, attention_score,
                          dual_query_features, forward_batch, init_params,
                          iterative_memory_update, memory_enhance,
                          pooled_interest, predict, self_attention_score)

VOCAB = VocabConfig(item=50, cate=10, shop=10, brand=10, max_len=40)


def zero_attention(d_alpha, d_h):
    def z(*shape):
        return K.parameter(np.zeros(shape), "z")

    return AttentionParams(z(d_alpha, d_h), z(d_h), z(d_h), z())


def zero_gru(input_dim, hidden_dim):
    def z(*shape):
        return K.parameter(np.zeros(shape), "z")

    return GruParams(
        z(hidden_dim, input_dim), z(hidden_dim, input_dim), z(hidden_dim, input_dim),
        z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim),
        z(hidden_dim), z(hidden_dim), z(hidden_dim),
    )


def small_cfg(**kw):
    base = dict(d_i=8, d_h=8, num_walk_iters=3, mem_steps=3, mlp_layers=(16, 8))
    base.update(kw)
    return SamConfig(**base)


def sample_seq(ids, rank_ts=500):
    events = [BehaviorEvent(i, i % 10, i % 10, i % 10, 400 + k) for k, i in enumerate(ids)]
    return BehaviorSequence(events, rank_ts)


class TestDualQueryFeatures:
    def test_equal_vectors_zero_subtraction_blocks(self):
        e = K.constant([2.0, -3.0])
        out = dual_query_features(e, e, e).data
        np.testing.assert_array_equal(out, [0, 0, 0, 0, 4, 9, 4, 9])

    def test_zero_rows(self):
        e = K.constant([0.0, 0.0])
        m = K.constant([1.0, 2.0])
        v = K.constant([3.0, 4.0])
        np.testing.assert_array_equal(dual_query_features(e, v, m).data,
                                      [-1, -2, -3, -4, 0, 0, 0, 0])

    def test_hand_case_block_order(self):
        out = dual_query_features(K.constant([1.0, 2.0]), K.constant([1.0, 0.0]),
                                  K.constant([0.0, 1.0])).data
        np.testing.assert_array_equal(out, [1, 1, 0, 2, 0, 2, 1, 0])

    def test_width_mismatch(self):
        with pytest.raises(ShapeError, match="widths differ"):
            dual_query_features(K.constant([1.0, 2.0]), K.constant([1.0]), K.constant([1.0, 2.0]))


class TestAttentionScore:
    def test_all_zero_params_give_half(self):
        p = zero_attention(8, 4)
        out = attention_score(K.constant(np.ones(8)), p)
        assert float(out.data) == 0.5

    def test_output_bias_dominates(self):
        p = zero_attention(8, 4)
        p.b2.data = np.asarray(10.0)
        out = float(attention_score(K.constant(np.ones(8)), p).data)
        assert out == pytest.approx(0.9999546021312976, rel=1e-12)

    def test_random_case_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        d_alpha, d_h = 8, 5
        p = AttentionParams(
            K.parameter(rng.normal(size=(d_alpha, d_h)), "w1"),
            K.parameter(rng.normal(size=d_h), "b1"),
            K.parameter(rng.normal(size=d_h), "w2"),
            K.parameter(rng.normal(size=()), "b2"),
        )
        alpha = rng.normal(size=d_alpha)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        hidden = [sig(sum(alpha[i] * p.w1.data[i][j] for i in range(d_alpha)) + p.b1.data[j])
                  for j in range(d_h)]
        want = sig(sum(hidden[j] * p.w2.data[j] for j in range(d_h)) + float(p.b2.data))
        got = float(attention_score(K.constant(alpha), p).data)
        assert got == pytest.approx(want, rel=1e-12)

    def test_weights_strictly_inside_unit_interval_and_unnormalized(self):
        cfg = small_cfg()
        params = init_params(cfg, VOCAB, seed=1)
        out = predict(sample_seq(range(1, 9)), BehaviorEvent(3, 3, 3, 3, 0), None,
                      params, cfg, VOCAB)
        for w in out.weights:
            assert ((w > 0) & (w < 1)).all()
        # raw weights are pooled as-is; their sum is not constrained to 1
        assert any(abs(w.sum() - 1.0) > 0.1 for w in out.weights)


class TestPooledInterest:
    def test_zero_weights(self):
        out = pooled_interest(K.constant(np.ones((4, 3))), K.constant(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_one_hot_selects_row(self):
        rows = np.arange(12.0).reshape(4, 3)
        w = np.zeros(4)
        w[2] = 1.0
        out = pooled_interest(K.constant(rows), K.constant(w))
        np.testing.assert_array_equal(out.data, rows[2])

    def test_two_row_weighted_sum(self):
        rows = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = pooled_interest(K.constant(rows), K.constant([0.25, 0.5]))
        np.testing.assert_allclose(out.data, 0.25 * rows[0] + 0.5 * rows[1], rtol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            pooled_interest(K.constant(np.ones((4, 3))), K.constant(np.zeros(3)))


class TestIterativeMemoryUpdate:
    def test_zero_param_composition(self):
        # zero attention -> all weights 0.5; zero GRU -> memory halves
        attn = zero_attention(8, 4)
        gru = zero_gru(2, 2)
        enc = K.constant([[1.0, 2.0], [3.0, 4.0]])
        v_t = K.constant([0.5, -0.5])
        cfg = SamConfig(d_i=4, d_h=4, num_walk_iters=1)
        m, weights = iterative_memory_update(enc, v_t, cfg, gru, attn)
        np.testing.assert_array_equal(weights[0].data, [0.5, 0.5])
        np.testing.assert_allclose(m.data, 0.5 * v_t.data, rtol=1e-15)

    def test_empty_sequence_keeps_target_without_gru_steps(self):
        attn = zero_attention(8, 4)
        gru = zero_gru(2, 2)
        v_t = K.constant([0.5, -0.5])
        with Meter() as meter:
            m, weights = iterative_memory_update(
                K.constant(np.zeros((0, 2))), v_t, SamConfig(d_i=4, num_walk_iters=3), gru, attn)
        assert m is v_t
        assert weights == []
        assert meter.gru_steps == 0

    def test_memory_starts_at_target_bitwise(self):
        cfg = small_cfg(num_walk_iters=1, mem_steps=0, variant="no_mem_enhance")
        params = init_params(cfg, VOCAB, seed=0)
        from samnet.encoder import embed_target, encode_sequence

        v_t = embed_target(BehaviorEvent(3, 3, 3, 3, 0), params.tables)
        enc = encode_sequence(sample_seq([1, 2, 3]), params.tables)
        # first-iteration weights must equal scoring with (target, target=memory)
        _, weights = iterative_memory_update(enc, v_t, cfg, params.walk_gru, params.attn)
        direct = attention_score(dual_query_features(enc, v_t, v_t), params.attn)
        np.testing.assert_array_equal(weights[0].data, direct.data)

    def test_walk_iteration_count_independent_of_length(self):
        cfg = small_cfg(mem_steps=0, variant="no_mem_enhance")
        params = init_params(cfg, VOCAB, seed=0)
        for length in (1, 10, 37):
            out = predict(sample_seq(range(1, length + 1)), BehaviorEvent(2, 2, 2, 2, 0),
                          None, params, cfg, VOCAB)
            assert out.sequential_op_count == 3
            assert len(out.weights) == 3


class TestMemoryEnhance:
    def test_zero_steps_is_identity(self):
        m = K.constant([2.0, -4.0])
        out = memory_enhance(m, K.constant([1.0, 1.0]), 0, K.constant(np.eye(2)), zero_gru(4, 2))
        assert out is m

    def test_zero_params_halve_state(self):
        m = K.constant([2.0, -4.0])
        out = memory_enhance(m, K.constant([1.0, 1.0]), 1,
                             K.parameter(np.zeros((2, 2)), "wu"), zero_gru(4, 2))
        np.testing.assert_allclose(out.data, [1.0, -2.0], rtol=1e-15)

    def test_executes_exactly_t_gru_steps_regardless_of_length(self):
        cfg = small_cfg(mem_steps=3)
        params = init_params(cfg, VOCAB, seed=0)
        for length in (1, 5, 30):
            out = predict(sample_seq(range(1, length + 1)), BehaviorEvent(2, 2, 2, 2, 0),
                          None, params, cfg, VOCAB)
            assert out.sequential_op_count == cfg.num_walk_iters + 3

    def test_input_width_validated(self):
        with pytest.raises(ShapeError, match="twice"):
            memory_enhance(K.constant([1.0, 2.0]), K.constant([1.0, 2.0]), 1,
                           K.constant(np.eye(2)), zero_gru(3, 2))


class TestPredict:
    def test_probability_in_unit_interval(self):
        rng = np.random.default_rng(0)
        cfg = small_cfg()
        params = init_params(cfg, VOCAB, seed=0)
        for _ in range(10):
            ids = rng.integers(0, 50, size=rng.integers(1, 12))
            out = predict(sample_seq(ids), BehaviorEvent(1, 1, 1, 1, 0), None, params, cfg, VOCAB)
            assert 0.0 < out.probability < 1.0

    def test_avg_pool_on_singleton_equals_one_hot_pipeline(self):
        cfg = small_cfg(variant="avg_pool")
        params = init_params(cfg, VOCAB, seed=3)
        out = predict(sample_seq([7]), BehaviorEvent(1, 1, 1, 1, 0), None, params, cfg, VOCAB)
        np.testing.assert_array_equal(out.weights[0], [1.0])

    def test_full_with_zero_steps_equals_no_mem_enhance(self):
        cfg_a = small_cfg(mem_steps=0, variant="full")
        cfg_b = small_cfg(mem_steps=3, variant="no_mem_enhance")
        pa = init_params(cfg_a, VOCAB, seed=5)
        pb = init_params(cfg_b, VOCAB, seed=5)
        seq = sample_seq([1, 2, 3, 4])
        tgt = BehaviorEvent(9, 9, 9, 9, 0)
        ya = predict(seq, tgt, None, pa, cfg_a, VOCAB)
        yb = predict(seq, tgt, None, pb, cfg_b, VOCAB)
        assert ya.probability == yb.probability

    def test_empty_sequence_scores(self):
        cfg = small_cfg()
        params = init_params(cfg, VOCAB, seed=0)
        out = predict(BehaviorSequence([], 100), BehaviorEvent(1, 1, 1, 1, 0),
                      None, params, cfg, VOCAB)
        assert 0.0 < out.probability < 1.0
        assert out.sequential_op_count == cfg.mem_steps

    def test_extra_features_change_the_score(self):
        cfg = small_cfg(extra_dim=3)
        params = init_params(cfg, VOCAB, seed=0)
        seq = sample_seq([1, 2])
        tgt = BehaviorEvent(1, 1, 1, 1, 0)
        a = predict(seq, tgt, np.zeros(3), params, cfg, VOCAB).probability
        b = predict(seq, tgt, np.array([1.0, -1.0, 2.0]), params, cfg, VOCAB).probability
        assert a != b


class TestAblationConsistency:
    def test_no_walk_weights_are_pointwise_in_target_and_row(self):
        cfg = small_cfg(num_walk_iters=1, mem_steps=0, variant="no_iterative_walk")
        params = init_params(cfg, VOCAB, seed=2)
        tgt = BehaviorEvent(5, 5, 5, 5, 0)
        base = predict(sample_seq([1, 2, 3, 4]), tgt, None, params, cfg, VOCAB)
        perturbed = predict(sample_seq([1, 9, 3, 4]), tgt, None, params, cfg, VOCAB)
        # row 0 scored identically although row 1 changed
        assert base.weights[0][0] == perturbed.weights[0][0]
        assert base.weights[0][2] == perturbed.weights[0][2]
        assert base.weights[0][1] != perturbed.weights[0][1]

    def test_full_walk_couples_rows_through_memory(self):
        cfg = small_cfg(num_walk_iters=2, mem_steps=0, variant="no_mem_enhance")
        params = init_params(cfg, VOCAB, seed=2)
        tgt = BehaviorEvent(5, 5, 5, 5, 0)
        base = predict(sample_seq([1, 2, 3, 4]), tgt, None, params, cfg, VOCAB)
        perturbed = predict(sample_seq([1, 9, 3, 4]), tgt, None, params, cfg, VOCAB)
        assert base.weights[0][0] == perturbed.weights[0][0]  # iteration 1: pointwise
        assert base.weights[1][0] != perturbed.weights[1][0]  # iteration 2: coupled


class TestSelfAttentionFoil:
    def test_single_row_passthrough(self):
        row = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(self_attention_score(row), row, rtol=1e-15)

    def test_identical_rows_passthrough(self):
        rows = np.tile([1.0, -2.0], (5, 1))
        np.testing.assert_allclose(self_attention_score(rows), rows, rtol=1e-12)

    def test_three_rows_match_brute_force(self):
        rng = np.random.default_rng(0)
        enc = rng.normal(size=(3, 4))
        got = self_attention_score(enc)
        want = np.zeros_like(enc)
        for i in range(3):
            scores = [sum(enc[i, k] * enc[j, k] for k in range(4)) / math.sqrt(4)
                      for j in range(3)]
            mx = max(scores)
            ex = [math.exp(s - mx) for s in scores]
            total = sum(ex)
            for j in range(3):
                for k in range(4):
                    want[i, k] += ex[j] / total * enc[j, k]
        np.testing.assert_allclose(got, want, rtol=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError, match="num_walk_iters"):
        SamConfig(num_walk_iters=0).validate()
    with pytest.raises(ConfigError, match="multiple of 4"):
        SamConfig(d_i=10).validate()
    with pytest.raises(ConfigError, match="variant"):
        SamConfig(variant="nope").validate()


def test_gradient_reaches_every_used_embedding_row():
    from samnet.encoder import build_batch
    from samnet.kernels import Tape, backward

    cfg = small_cfg()
    params = init_params(cfg, VOCAB, seed=4)

    class S:
        label = 1
        target = BehaviorEvent(9, 9, 9, 9, 0)
        sequence = sample_seq([1, 2, 3])

    batch = build_batch([S()], VOCAB)
    params.zero_grads()
    with Tape() as tape:
        y, _ = forward_batch(params, batch, cfg)
        backward(tape, K.bce_mean(y, batch.labels))
    item_grad = params.tables.item.grad
    for used in (1, 2, 3, 9):
        assert np.abs(item_grad[used]).max() > 0
