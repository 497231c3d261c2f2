import math

import numpy as np
import pytest

from histofusion.core import functional as F
from histofusion.core.gradcheck import check_gradients, worst
from histofusion.core.tensor import Tensor
from histofusion.errors import ConfigurationError, HistoFusionError
from histofusion.gradsuite import _randomize
from histofusion.histogram import (BinPartition, HistogramAttention, HistogramBlock, bin_attention,
                                   bin_bounds, from_tokens, histogram_block, intensity_score,
                                   inverse_permute, partition, sort_partition, to_tokens)


def dense_attention(q, k, v):
    """Row-by-row softmax(q k^T / sqrt(d)) v for one head."""
    d = q.shape[-1]
    out = np.zeros_like(v)
    for i in range(q.shape[0]):
        logits = np.array([q[i] @ k[j] for j in range(k.shape[0])]) / math.sqrt(d)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        out[i] = sum(w[j] * v[j] for j in range(v.shape[0]))
    return out


class TestIntensityScore:
    def test_constant(self):
        f = Tensor(np.full((1, 5, 3, 3), 0.7))
        np.testing.assert_allclose(intensity_score(f), 0.7, rtol=1e-6)

    def test_symmetric_channels(self):
        f = np.zeros((1, 2, 3, 3))
        f[:, 0], f[:, 1] = 1, -1
        assert np.all(intensity_score(Tensor(f)) == 0)

    def test_loop_oracle(self):
        f = np.random.default_rng(23).standard_normal((1, 8, 4, 4))
        got = intensity_score(Tensor(f))
        for y in range(4):
            for x in range(4):
                assert abs(got[0, y, x] - sum(f[0, c, y, x] for c in range(8)) / 8) < 1e-6


class TestPartition:
    def test_hand_sorted(self):
        part = partition(np.array([[3.0, 1.0, 2.0, 0.0]]), 2)
        assert part.perm[0].tolist() == [3, 1, 2, 0]
        assert part.bounds.tolist() == [0, 2, 4]

    def test_ties_are_stable(self):
        part = partition(np.zeros((1, 7)), 3)
        assert part.perm[0].tolist() == list(range(7))

    def test_remainder_goes_last(self):
        assert partition(np.zeros((1, 10)), 3).sizes == [3, 3, 4]

    @pytest.mark.parametrize("bins", [0, 11])
    def test_bad_bin_count(self, bins):
        with pytest.raises(ConfigurationError):
            bin_bounds(10, bins)

    def test_labels(self):
        part = partition(np.array([[3.0, 1.0, 2.0, 0.0]]), 2)
        assert part.labels()[0].tolist() == [1, 0, 1, 0]

    def test_round_trip_bit_exact(self, rng):
        for _ in range(20):
            h, w = rng.integers(1, 7, 2)
            bins = int(rng.integers(1, h * w + 1))
            feat = Tensor(rng.standard_normal((2, 3, h, w)))
            part, chunks = sort_partition(feat, rng.standard_normal((2, h, w)), bins)
            back = from_tokens(inverse_permute(chunks, part), h, w)
            assert back.data.tobytes() == feat.data.tobytes()

    def test_inverse_permute_size_mismatch(self, rng):
        feat = Tensor(rng.standard_normal((1, 2, 2, 2)))
        part, chunks = sort_partition(feat, rng.standard_normal((1, 2, 2)), 2)
        with pytest.raises(HistoFusionError):
            inverse_permute(chunks[:1], part)


class TestBinAttention:
    def test_singleton_returns_value(self, rng):
        q, k, v = (Tensor(rng.standard_normal((1, 1, 4))) for _ in range(3))
        np.testing.assert_allclose(bin_attention(q, k, v).data, v.data, rtol=1e-6)

    def test_zero_query_is_uniform(self, rng):
        k, v = Tensor(rng.standard_normal((1, 5, 4))), Tensor(rng.standard_normal((1, 5, 4)))
        out = bin_attention(Tensor(np.zeros((1, 5, 4))), k, v).data
        np.testing.assert_allclose(out, np.broadcast_to(v.data.mean(axis=1, keepdims=True), out.shape),
                                   atol=1e-6)

    def test_dense_oracle(self, f64):
        rng = np.random.default_rng(29)
        q, k, v = (rng.standard_normal((6, 8)) for _ in range(3))
        got = bin_attention(Tensor(q[None]), Tensor(k[None]), Tensor(v[None])).data[0]
        np.testing.assert_allclose(got, dense_attention(q, k, v), atol=1e-5)

    def test_multi_head_is_per_head_dense(self, f64, rng):
        q, k, v = (rng.standard_normal((5, 8)) for _ in range(3))
        got = bin_attention(Tensor(q[None]), Tensor(k[None]), Tensor(v[None]), heads=2).data[0]
        want = np.concatenate([dense_attention(q[:, s], k[:, s], v[:, s])
                               for s in (slice(0, 4), slice(4, 8))], axis=1)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_heads_must_divide(self, rng):
        q = Tensor(rng.standard_normal((1, 3, 6)))
        with pytest.raises(ConfigurationError):
            bin_attention(q, q, q, heads=4)


class TestHistogramAttention:
    def test_single_bin_equals_full_attention(self, f64, rng):
        attn = HistogramAttention(4, 1, 1, rng)
        feat = Tensor(rng.standard_normal((1, 4, 3, 5)))
        got = attn(feat, rng.standard_normal((1, 3, 5))).data
        c = 4
        tokens = feat.data.reshape(c, -1).T
        qkv = tokens @ attn.qkv_w.data[:, :, 0, 0].T + attn.qkv_b.data
        att = dense_attention(qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:])
        want = (att @ attn.out_w.data[:, :, 0, 0].T + attn.out_b.data).T.reshape(1, c, 3, 5)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_attention_stays_within_bins(self, rng):
        # changing a value token of bin 0 must not affect outputs of tokens in other bins
        attn = HistogramAttention(2, 2, 1, rng)
        feat = rng.standard_normal((1, 2, 2, 2))
        scores = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        a = attn(Tensor(feat), scores).data
        feat[0, :, 0, 0] += 5.0
        b = attn(Tensor(feat), scores).data
        np.testing.assert_array_equal(a[0, :, 1, :], b[0, :, 1, :])

    def test_spatial_shuffle_equivariance(self, f64, rng):
        block = HistogramBlock(4, 2, 1, rng)
        _randomize(block, rng, 0.2)
        feat = rng.standard_normal((1, 4, 3, 4))
        sigma = rng.permutation(12)
        shuffled = feat.reshape(1, 4, 12)[:, :, sigma].reshape(1, 4, 3, 4)
        assert len(np.unique(feat.mean(axis=1))) == 12
        a = block.attention_branch(Tensor(feat)).data.reshape(1, 4, 12)
        b = block.attention_branch(Tensor(shuffled)).data.reshape(1, 4, 12)
        np.testing.assert_allclose(b, a[:, :, sigma], atol=1e-12)


class TestHistogramBlock:
    def test_zero_weights_is_identity(self, rng):
        block = HistogramBlock(8, 4, 2, rng).zero_()
        x = Tensor(rng.standard_normal((1, 8, 4, 4)))
        np.testing.assert_array_equal(histogram_block(x, block).data, x.data)

    def test_gradient(self, f64):
        rng = np.random.default_rng(31)
        block = HistogramBlock(8, 4, 1, rng)
        _randomize(block, rng, 0.2)
        x = Tensor(rng.standard_normal((1, 8, 6, 6)), requires_grad=True)
        proj = rng.standard_normal((1, 8, 6, 6))
        results = check_gradients(lambda: F.sum(histogram_block(x, block) * proj),
                                  [("x", x)] + list(block.named_parameters()), rng)
        assert len(results) >= 20 and not worst(results, 1e-2, 1e-4)
