import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvcompactor import (
    AttnScoreConfig,
    ScoreVector,
    h2o_scores,
    mean_pool,
    noncausal_scores,
    snapkv_scores,
    value_norm_scale,
)
from kvcompactor.errors import ParameterError


def dense_softmax(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def oracle_noncausal(Q, K, scale, chunk):
    n = Q.shape[0]
    out = np.empty(n)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        out[s:e] = dense_softmax(scale * Q[s:e] @ K[s:e].T).sum(axis=0)
    return out


def oracle_causal(Q, K, scale, window=None):
    n = Q.shape[0]
    w = n if window is None else window
    logits = scale * Q[n - w :] @ K.T
    for i in range(w):
        logits[i, n - w + i + 1 :] = -np.inf
    return dense_softmax(logits).sum(axis=0)


def pair(rng, n, d):
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


class TestNonCausal:
    def test_uniform_two_tokens(self):
        s = noncausal_scores(np.zeros((2, 1)), np.zeros((2, 1)), AttnScoreConfig(chunk_size=2, scale=1.0))
        assert np.allclose(s.scores, [1.0, 1.0])
        assert s.kind == "attention"

    def test_chunk_mass_equals_chunk_length(self):
        Q, K = pair(np.random.default_rng(0), 100, 8)
        s = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=32)).scores
        for start in (0, 32, 64, 96):
            end = min(start + 32, 100)
            assert abs(s[start:end].sum() - (end - start)) < 1e-4

    def test_full_chunk_matches_oracle(self):
        Q, K = pair(np.random.default_rng(0), 4, 2)
        cfg = AttnScoreConfig(chunk_size=4)
        got = noncausal_scores(Q, K, cfg).scores
        assert np.abs(got - oracle_noncausal(Q, K, 1 / np.sqrt(2), 4)).max() < 1e-6

    def test_chunking_changes_result(self):
        Q, K = pair(np.random.default_rng(0), 4, 2)
        a = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=2)).scores
        b = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=4)).scores
        assert not np.allclose(a, b)

    @pytest.mark.parametrize("chunk", [7, 64, 512])
    def test_oracle_agreement(self, chunk):
        Q, K = pair(np.random.default_rng(1), 300, 16)
        got = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=chunk)).scores
        assert np.abs(got - oracle_noncausal(Q, K, 0.25, chunk)).max() < 1e-5

    def test_chunk_locality(self):
        rng = np.random.default_rng(2)
        Q, K = pair(rng, 96, 4)
        cfg = AttnScoreConfig(chunk_size=32)
        base = noncausal_scores(Q, K, cfg).scores
        Q2 = Q.copy()
        Q2[32:64] = rng.standard_normal((32, 4))
        bumped = noncausal_scores(Q2, K, cfg).scores
        assert np.array_equal(base[:32], bumped[:32])
        assert np.array_equal(base[64:], bumped[64:])
        assert not np.allclose(base[32:64], bumped[32:64])

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            noncausal_scores(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_explicit_scale(self):
        Q, K = pair(np.random.default_rng(3), 8, 4)
        default = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=8)).scores
        explicit = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=8, scale=0.5)).scores
        assert np.allclose(default, explicit)
        unscaled = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=8, scale=1.0)).scores
        assert not np.allclose(default, unscaled)


class TestH2O:
    def test_single_token(self):
        s = h2o_scores(np.ones((1, 2)), np.ones((1, 2)))
        assert np.allclose(s.scores, [1.0])

    def test_uniform_inputs_harmonic_head(self):
        n = 6
        s = h2o_scores(np.zeros((n, 3)), np.zeros((n, 3))).scores
        assert abs(s[0] - sum(1 / (i + 1) for i in range(n))) < 1e-12
        assert abs(s[-1] - 1 / n) < 1e-12

    def test_small_oracle(self):
        Q = K = np.array([[1.0], [2.0], [3.0]])
        got = h2o_scores(Q, K, AttnScoreConfig(scale=1.0)).scores
        assert np.abs(got - oracle_causal(Q, K, 1.0)).max() < 1e-6

    def test_blocked_rows_match_oracle(self):
        # force multiple row blocks through the kernel
        from kvcompactor import attnscore

        Q, K = pair(np.random.default_rng(4), 50, 4)
        got = h2o_scores(Q, K, AttnScoreConfig(scale=0.5)).scores
        old = attnscore._ROW_BLOCK
        attnscore._ROW_BLOCK = 16
        try:
            blocked = h2o_scores(Q, K, AttnScoreConfig(scale=0.5)).scores
        finally:
            attnscore._ROW_BLOCK = old
        oracle = oracle_causal(Q, K, 0.5)
        assert np.abs(got - oracle).max() < 1e-10
        assert np.abs(blocked - oracle).max() < 1e-10


class TestSnapKV:
    def test_window_equals_n_matches_h2o(self):
        Q, K = pair(np.random.default_rng(5), 40, 8)
        a = snapkv_scores(Q, K, AttnScoreConfig(baseline_window=40)).scores
        b = h2o_scores(Q, K).scores
        assert np.array_equal(a, b)

    def test_window_one_is_last_row(self):
        Q, K = pair(np.random.default_rng(6), 10, 4)
        got = snapkv_scores(Q, K, AttnScoreConfig(baseline_window=1, scale=1.0)).scores
        logits = Q[-1:] @ K.T
        assert np.abs(got - dense_softmax(logits)[0]).max() < 1e-12

    def test_oracle(self):
        Q, K = pair(np.random.default_rng(0), 4, 2)
        got = snapkv_scores(Q, K, AttnScoreConfig(baseline_window=2)).scores
        assert np.abs(got - oracle_causal(Q, K, 1 / np.sqrt(2), window=2)).max() < 1e-6

    def test_window_too_large(self):
        with pytest.raises(ParameterError):
            snapkv_scores(np.zeros((3, 2)), np.zeros((3, 2)), AttnScoreConfig(baseline_window=4))


class TestMeanPool:
    def test_window_one_identity(self):
        s = ScoreVector([1.0, 2.0, 3.0], "attention")
        assert mean_pool(s, 1) is s

    def test_edge_truncation(self):
        got = mean_pool(ScoreVector([0.0, 3.0, 0.0], "attention"), 3).scores
        assert np.allclose(got, [1.5, 1.0, 1.5])
        got = mean_pool(ScoreVector([1.0, 2.0, 3.0, 4.0, 5.0], "attention"), 3).scores
        assert np.allclose(got, [1.5, 2.0, 3.0, 4.0, 4.5])

    def test_even_window_rejected(self):
        with pytest.raises(ParameterError):
            mean_pool(ScoreVector([1.0, 2.0], "attention"), 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 5), st.integers(0, 2**16))
    def test_length_preserved(self, n, half, seed):
        v = ScoreVector(np.random.default_rng(seed).standard_normal(n), "attention")
        assert len(mean_pool(v, 2 * half + 1)) == n


class TestValueNorm:
    def test_unit_rows_identity(self):
        v = np.eye(3)
        s = ScoreVector([0.5, 1.5, 2.5], "attention")
        assert np.allclose(value_norm_scale(s, v).scores, s.scores)

    def test_small_example(self):
        got = value_norm_scale(ScoreVector([1.0, 1.0], "attention"), np.array([[3.0, 4.0], [0.0, 0.0]]))
        assert np.allclose(got.scores, [5.0, 0.0])

    def test_norm_oracle(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal((20, 6))
        s = ScoreVector(rng.random(20), "attention")
        got = value_norm_scale(s, v).scores
        assert np.abs(got - s.scores * np.linalg.norm(v, axis=1)).max() < 1e-6

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            value_norm_scale(ScoreVector([1.0], "attention"), np.zeros((2, 2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 64), st.integers(1, 8), st.integers(1, 70), st.integers(0, 2**16))
def test_scores_nonnegative_and_mass_conserved(n, d, chunk, seed):
    rng = np.random.default_rng(seed)
    Q, K = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    s = noncausal_scores(Q, K, AttnScoreConfig(chunk_size=chunk)).scores
    assert (s >= 0).all()
    assert abs(s.sum() - n) < 1e-4
