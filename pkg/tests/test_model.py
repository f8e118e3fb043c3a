import numpy as np
import pytest

from localglobal.model import (AttentionAggregator, LlmMapper, MaskVector,
                               ModelError, aggregate_stock, apply_mask,
                               attention_weights, clone_params, init_params,
                               load_checkpoint, map_llm, predict,
                               save_checkpoint)


def cosine_setup(cosines):
    """Aggregator/matrix pair whose per-row cosine similarities are `cosines`."""
    D = 3
    agg = AttentionAggregator(np.eye(D), np.eye(D), np.array([1.0, 0.0, 0.0]))
    rows = [[c, np.sqrt(max(0.0, 1 - c * c)), 0.0] for c in cosines]
    return agg, np.array(rows)


class TestAttentionWeights:
    def test_singleton(self):
        agg, M = cosine_setup([0.7])
        assert np.allclose(attention_weights(agg, M), [1.0])

    def test_clip_and_renormalize(self):
        agg, M = cosine_setup([0.5, -0.2, 0.5])
        w = attention_weights(agg, M)
        assert np.allclose(w, [0.5, 0.0, 0.5], atol=1e-12)

    def test_all_negative_uniform_fallback(self):
        agg, M = cosine_setup([-0.4, -0.9, -0.1])
        assert np.allclose(attention_weights(agg, M), [1 / 3] * 3)

    def test_degenerate_query(self):
        agg, M = cosine_setup([0.5, 0.1])
        agg.query = np.zeros(3)
        with pytest.raises(ModelError, match="degenerate"):
            attention_weights(agg, M)

    def test_degenerate_key_row(self):
        agg, M = cosine_setup([0.5, 0.1])
        M[1] = 0.0
        with pytest.raises(ModelError, match="degenerate"):
            attention_weights(agg, M)

    def test_simplex_property_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n, m, D = rng.integers(1, 8), rng.integers(1, 6), rng.integers(1, 5)
            agg = AttentionAggregator(rng.normal(size=(m, D)), rng.normal(size=(m, D)),
                                      rng.normal(size=D))
            M = rng.normal(size=(n, m))
            try:
                w = attention_weights(agg, M)
            except ModelError:
                continue
            assert np.all(w >= 0) and abs(w.sum() - 1.0) < 1e-12


class TestAggregateStock:
    def test_endpoint_weight(self):
        # similarities (1, -0.5): only the first stock survives the clip
        agg, M = cosine_setup([1.0, -0.5])
        f = aggregate_stock(agg, M)
        assert np.allclose(f, M[0] @ agg.w_value, atol=1e-12)

    def test_identical_stocks(self):
        rng = np.random.default_rng(1)
        agg = AttentionAggregator(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)),
                                  rng.normal(size=2))
        row = rng.normal(size=4)
        M = np.vstack([row, row])
        assert np.allclose(aggregate_stock(agg, M), row @ agg.w_value, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        n, m, D = 4, 6, 3
        agg = AttentionAggregator(rng.normal(size=(m, D)), rng.normal(size=(m, D)),
                                  rng.normal(size=D))
        M = rng.normal(size=(n, m))
        # explicit element-wise recomputation
        sims = []
        for i in range(n):
            k = np.array([sum(M[i][a] * agg.w_key[a][d] for a in range(m)) for d in range(D)])
            sims.append(sum(agg.query[d] * k[d] for d in range(D))
                        / (np.sqrt(sum(q * q for q in agg.query)) * np.sqrt(sum(x * x for x in k))))
        a = [max(0.0, s) for s in sims]
        tot = sum(a)
        w = [x / tot for x in a] if tot > 0 else [1.0 / n] * n
        expect = np.zeros(D)
        for i in range(n):
            v = [sum(M[i][b] * agg.w_value[b][d] for b in range(m)) for d in range(D)]
            expect += w[i] * np.array(v)
        assert np.allclose(aggregate_stock(agg, M), expect, atol=1e-12)

    def test_convex_hull_property(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n, m, D = 5, 4, 3
            agg = AttentionAggregator(rng.normal(size=(m, D)), rng.normal(size=(m, D)),
                                      rng.normal(size=D))
            M = rng.normal(size=(n, m))
            V = M @ agg.w_value
            f = aggregate_stock(agg, M)
            assert np.all(f >= V.min(axis=0) - 1e-12)
            assert np.all(f <= V.max(axis=0) + 1e-12)


class TestMapLlm:
    def test_zero_matrix(self):
        mapper = LlmMapper(np.zeros((3, 5)))
        assert np.array_equal(map_llm(mapper, np.ones(5)), np.zeros(3))

    def test_identity(self):
        mapper = LlmMapper(np.eye(4))
        v = np.array([1.0, -2.0, 0.5, 3.0])
        assert np.array_equal(map_llm(mapper, v), v)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        W = rng.normal(size=(3, 7))
        v = rng.normal(size=7)
        expect = np.array([sum(W[i][j] * v[j] for j in range(7)) for i in range(3)])
        assert np.allclose(map_llm(LlmMapper(W), v), expect, atol=1e-12)

    def test_scale_covariance(self):
        rng = np.random.default_rng(6)
        mapper = LlmMapper(rng.normal(size=(2, 4)))
        v = rng.normal(size=4)
        for c in (2.0, -0.5, 0.0):
            assert np.array_equal(map_llm(mapper, c * v), c * map_llm(mapper, v))

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError):
            map_llm(LlmMapper(np.zeros((2, 4))), np.zeros(5))


class TestApplyMask:
    def test_identity_mask(self):
        f = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(apply_mask(f, np.ones(3)), f)

    def test_zero_mask(self):
        assert np.array_equal(apply_mask(np.array([1.0, 2.0]), np.zeros(2)), np.zeros(2))

    def test_elementwise(self):
        out = apply_mask(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 1.0]))
        assert np.array_equal(out, [1.0, 0.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ModelError):
            apply_mask(np.ones(3), np.ones(4))

    def test_mask_vector_range(self):
        with pytest.raises(ModelError):
            MaskVector(np.array([0.5, 1.2]))


class TestPredict:
    def setup_method(self):
        self.rng = np.random.default_rng(12)
        self.m, self.H, self.D, self.dl, self.n = 6, 4, 3, 8, 5
        self.M = self.rng.normal(size=(self.n, self.m))
        self.v = self.rng.normal(size=self.dl)

    def params(self, variant, **kw):
        return init_params(self.m, self.H, self.D, self.dl, variant, seed=42, **kw)

    def test_zero_beta_reduces_to_local(self):
        for variant in ("lg_stock", "lg_llm", "scrl_lg"):
            p = self.params(variant)
            p.beta.w2 = np.zeros_like(p.beta.w2)
            p.beta.b2 = np.zeros_like(p.beta.b2)
            local = self.params("local")
            mask = np.ones(self.m) if variant == "scrl_lg" else None
            got = predict(p, self.M, v_llm=self.v, mask=mask)
            assert np.array_equal(got, predict(local, self.M))

    def test_ones_mask_equals_lg_stock(self):
        scrl = self.params("scrl_lg")
        stock = clone_params(scrl)
        stock.variant = "lg_stock"
        got = predict(scrl, self.M, mask=np.ones(self.m))
        assert np.array_equal(got, predict(stock, self.M))

    def test_ones_mask_equals_lg_stock_global_mode(self):
        scrl = self.params("scrl_lg", mask_mode="global")
        stock = clone_params(scrl)
        stock.variant = "lg_stock"
        got = predict(scrl, self.M, mask=np.ones(self.D))
        assert np.array_equal(got, predict(stock, self.M))

    def test_missing_required_input(self):
        with pytest.raises(ModelError):
            predict(self.params("lg_llm"), self.M)
        with pytest.raises(ModelError):
            predict(self.params("scrl_lg"), self.M)
        with pytest.raises(ModelError):
            predict(self.params("local"), self.M, mask=np.ones(self.m))

    def test_matches_straight_line_reimplementation(self):
        p = self.params("scrl_lg", mask_mode="global")
        mask = np.array([1.0, 0.0, 1.0])
        got = predict(p, self.M, mask=mask)
        relu = lambda x: np.maximum(0.0, x)
        alpha = relu(self.M @ p.local.w1 + p.local.b1) @ p.local.w2 + p.local.b2
        B = relu(self.M @ p.beta.w1 + p.beta.b1) @ p.beta.w2 + p.beta.b2
        K = self.M @ p.aggregator.w_key
        V = self.M @ p.aggregator.w_value
        s = K @ p.aggregator.query / (np.linalg.norm(p.aggregator.query)
                                      * np.linalg.norm(K, axis=1))
        a = np.maximum(0.0, s)
        w = a / a.sum() if a.sum() > 0 else np.full(self.n, 1 / self.n)
        f = (V.T @ w) * mask
        expect = alpha[:, 0] + B @ f
        assert np.allclose(got, expect, atol=1e-12)

    def test_deterministic(self):
        p = self.params("lg_stock")
        assert np.array_equal(predict(p, self.M), predict(p, self.M))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params(5, 3, 2, 4, "lg_llm", seed=8)
        save_checkpoint(p, tmp_path / "m.ckpt")
        q = load_checkpoint(tmp_path / "m.ckpt")
        assert q.variant == "lg_llm" and q.m == 5 and q.D == 2 and q.d_llm == 4
        assert np.array_equal(p.local.w1, q.local.w1)
        assert np.array_equal(p.aggregator.query, q.aggregator.query)
        assert np.array_equal(p.mapper.w_llm, q.mapper.w_llm)

    def test_save_is_byte_deterministic(self, tmp_path):
        p = init_params(5, 3, 2, 4, "lg_stock", seed=8)
        save_checkpoint(p, tmp_path / "a.ckpt")
        save_checkpoint(p, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
