"""AUC against a brute-force pairwise oracle; entropy diagnostics."""
import math

import numpy as np
import pytest

from samnet.evaluation import attention_entropy, auc, entropy_vs_iterations


def brute_force_auc(scores, labels):
    """O(P*N) pairwise definition, ties counted half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc([(0.9, 1), (0.1, 0)]) == 1.0

    def test_all_tied_is_half(self):
        assert auc([(0.5, 1), (0.5, 0), (0.5, 1), (0.5, 0)]) == 0.5

    def test_six_point_mixed_case(self):
        pairs = [(0.8, 1), (0.7, 0), (0.7, 1), (0.4, 0), (0.2, 1), (0.1, 0)]
        want = brute_force_auc([p[0] for p in pairs], [p[1] for p in pairs])
        assert auc(pairs) == want

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            auc([(0.5, 1), (0.9, 1)])

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ValueError):
            auc([(0.5, 2), (0.9, 0)])

    def test_matches_brute_force_exactly_on_random_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(2, 60))
            # quantized scores force plenty of ties
            scores = rng.integers(0, max(2, n // 3), size=n) / 7.0
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert auc(scores, labels) == brute_force_auc(list(scores), list(labels))

    def test_matches_brute_force_on_thousand_points(self):
        rng = np.random.default_rng(1)
        scores = np.round(rng.random(1000), 2)
        labels = rng.integers(0, 2, size=1000)
        assert auc(scores, labels) == brute_force_auc(list(scores), list(labels))


class TestAttentionEntropy:
    def test_uniform_is_log_length(self):
        assert attention_entropy(np.full(8, 0.3)) == pytest.approx(
            2.0794415416798357, rel=1e-12)

    def test_one_hot_is_zero(self):
        assert attention_entropy([0.0, 1.0, 0.0]) == 0.0

    def test_three_point_case(self):
        a = np.array([0.2, 0.6, 0.2])
        p = a / a.sum()
        want = -sum(pi * math.log(pi) for pi in p)
        assert attention_entropy(a) == pytest.approx(want, rel=1e-12)

    def test_all_zero_weights_count_as_uniform(self):
        assert attention_entropy(np.zeros(5)) == pytest.approx(math.log(5), rel=1e-12)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            attention_entropy([0.2, -0.1])

    def test_bounds_and_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            w = rng.random(n)
            e = attention_entropy(w)
            assert -1e-12 <= e <= math.log(n) + 1e-12
            for c in (1e-3, 7.0, 1e4):
                assert attention_entropy(c * w) == pytest.approx(e, rel=1e-9, abs=1e-12)


class TestEntropyVsIterations:
    def _fixture(self, variant, iters):
        from samnet.data import SynthSpec, generate_synthetic, infer_vocab
        from samnet.model import SamConfig, init_params

        corpus = generate_synthetic(SynthSpec(60, 5, 6, 32, 0.5, seed=2))
        vocab = infer_vocab(corpus)
        cfg = SamConfig(d_i=8, d_h=8, num_walk_iters=iters, mem_steps=0,
                        variant=variant, mlp_layers=(8,))
        return init_params(cfg, vocab, seed=0), cfg, corpus, vocab

    def test_single_iteration_gives_single_entry(self):
        params, cfg, corpus, vocab = self._fixture("no_mem_enhance", 1)
        trace = entropy_vs_iterations(params, cfg, corpus, vocab)
        assert len(trace.mean_entropy) == 1

    def test_uniform_weight_model_hits_log_length(self):
        params, cfg, corpus, vocab = self._fixture("avg_pool", 3)
        trace = entropy_vs_iterations(params, cfg, corpus, vocab)
        for e in trace.mean_entropy:
            assert e == pytest.approx(math.log(6), rel=1e-12)

    def test_csv_shape(self):
        params, cfg, corpus, vocab = self._fixture("no_mem_enhance", 2)
        text = entropy_vs_iterations(params, cfg, corpus, vocab).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "iteration,mean_entropy"
        assert len(lines) == 3
        assert lines[1].startswith("1,") and lines[2].startswith("2,")
