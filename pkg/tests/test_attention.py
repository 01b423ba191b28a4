import itertools

import numpy as np
import pytest

import oracles
from pitrack import tensor as T
from pitrack.attention import (
    AttentionWeights,
    MultiHeadParams,
    assignment_context,
    multi_head,
    scaled_dot_attention,
)


def _params(d, n_heads, seed=0, output_projection=False):
    store = T.ParamStore()
    p = MultiHeadParams(store, "attn", d, n_heads, np.random.default_rng(seed),
                        output_projection)
    return store, p


class TestScaledDotAttention:
    def test_single_key_returns_value(self, rng):
        q = T.constant(rng.standard_normal((3, 4)))
        k = T.constant(rng.standard_normal((1, 4)))
        v = T.constant(rng.standard_normal((1, 4)))
        out, weights = scaled_dot_attention(q, k, v)
        for row in range(3):
            assert np.abs(out.data[row] - v.data[0]).max() < 1e-12
        assert np.abs(weights - 1.0).max() < 1e-15

    def test_orthogonal_query_gives_value_mean(self):
        q = T.constant([[0.0, 0.0, 1.0]])
        k = T.constant([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
        v = T.constant(np.arange(9.0).reshape(3, 3))
        out, weights = scaled_dot_attention(q, k, v)
        assert np.abs(out.data[0] - v.data.mean(axis=0)).max() < 1e-12
        assert np.abs(weights[0] - 1.0 / 3.0).max() < 1e-12

    def test_matches_scalar_loop_oracle(self, rng):
        q = rng.standard_normal((2, 2))
        k = rng.standard_normal((3, 2))
        v = rng.standard_normal((3, 2))
        out, weights = scaled_dot_attention(T.constant(q), T.constant(k), T.constant(v))
        want, want_w = oracles.attention_loops(q.tolist(), k.tolist(), v.tolist())
        assert np.abs(out.data - np.array(want)).max() < 1e-12
        assert np.abs(weights - np.array(want_w)).max() < 1e-12

    def test_width_mismatch_rejected(self, rng):
        with pytest.raises(T.ShapeError):
            scaled_dot_attention(
                T.constant(rng.standard_normal((2, 3))),
                T.constant(rng.standard_normal((2, 4))),
                T.constant(rng.standard_normal((2, 4))),
            )


class TestMultiHead:
    def test_identity_weights_single_key(self, rng):
        store = T.ParamStore()
        p = MultiHeadParams(store, "attn", 3, 1, np.random.default_rng(0))
        for w in (p.wq[0], p.wk[0], p.wv[0]):
            w.data[:] = np.eye(3)
        q = T.constant(rng.standard_normal((2, 3)))
        kv = T.constant(rng.standard_normal((1, 3)))
        out, _ = multi_head(q, kv, p)
        for row in range(2):
            assert np.abs(out.data[row] - kv.data[0]).max() < 1e-12

    def test_head_independence(self, rng):
        store, p = _params(4, 2, seed=1)
        q = T.constant(rng.standard_normal((3, 4)))
        kv = T.constant(rng.standard_normal((5, 4)))
        base, _ = multi_head(q, kv, p)
        for w in (p.wq[1], p.wk[1], p.wv[1]):
            w.data += 0.31
        perturbed, _ = multi_head(q, kv, p)
        assert np.array_equal(base.data[:, :2], perturbed.data[:, :2])
        assert np.abs(base.data[:, 2:] - perturbed.data[:, 2:]).max() > 1e-6

    def test_matches_per_head_composition(self, rng):
        store, p = _params(8, 4, seed=2)
        q = T.constant(rng.standard_normal((3, 8)))
        kv = T.constant(rng.standard_normal((6, 8)))
        fused, fused_w = multi_head(q, kv, p)
        parts = []
        part_w = []
        for i in range(4):
            out, w = scaled_dot_attention(
                T.matmul(q, p.wq[i]), T.matmul(kv, p.wk[i]), T.matmul(kv, p.wv[i])
            )
            parts.append(out)
            part_w.append(w)
        composed = T.concat_cols(parts)
        assert np.abs(fused.data - composed.data).max() < 1e-12
        assert np.abs(fused_w - np.stack(part_w)).max() < 1e-12

    def test_scalar_loop_oracle(self, rng):
        store, p = _params(4, 2, seed=3)
        q = rng.standard_normal((3, 4))
        kv = rng.standard_normal((5, 4))
        out, _ = multi_head(T.constant(q), T.constant(kv), p)
        want = oracles.multi_head_loops(
            q.tolist(), kv.tolist(),
            [w.data.tolist() for w in p.wq],
            [w.data.tolist() for w in p.wk],
            [w.data.tolist() for w in p.wv],
        )
        assert np.abs(out.data - np.array(want)).max() < 1e-12

    def test_head_count_must_divide_width(self):
        store = T.ParamStore()
        with pytest.raises(ValueError):
            MultiHeadParams(store, "attn", 6, 4, np.random.default_rng(0))

    def test_optional_output_projection(self, rng):
        store, p = _params(4, 2, seed=4, output_projection=True)
        q = T.constant(rng.standard_normal((3, 4)))
        kv = T.constant(rng.standard_normal((4, 4)))
        out, _ = multi_head(q, kv, p)
        p_off = MultiHeadParams.__new__(MultiHeadParams)
        p_off.d, p_off.n_heads, p_off.d_k = p.d, p.n_heads, p.d_k
        p_off.wq, p_off.wk, p_off.wv, p_off.proj = p.wq, p.wk, p.wv, None
        bare, _ = multi_head(q, kv, p_off)
        assert np.abs(out.data - bare.data @ p.proj.data).max() < 1e-12


class TestAssignmentContext:
    def test_input_permutation_invariance(self, rng):
        store, p = _params(6, 2, seed=5)
        x = rng.standard_normal((4, 6))
        h = T.constant(rng.standard_normal((3, 6)))
        base, _ = assignment_context(T.constant(x), h, p)
        for perm in itertools.permutations(range(4)):
            out, _ = assignment_context(T.constant(x[list(perm)]), h, p)
            assert np.abs(out.data - base.data).max() < 1e-9

    def test_state_permutation_equivariance(self, rng):
        store, p = _params(6, 3, seed=6)
        x = T.constant(rng.standard_normal((4, 6)))
        h = rng.standard_normal((5, 6))
        base, _ = assignment_context(x, T.constant(h), p)
        for _ in range(10):
            sigma = rng.permutation(5)
            out, _ = assignment_context(x, T.constant(h[sigma]), p)
            assert np.abs(out.data - base.data[sigma]).max() < 1e-9

    def test_hand_set_weights_match_oracle(self):
        store = T.ParamStore()
        p = MultiHeadParams(store, "attn", 2, 1, np.random.default_rng(0))
        p.wq[0].data[:] = [[0.5, -0.25], [1.0, 0.75]]
        p.wk[0].data[:] = [[-0.5, 0.3], [0.2, 1.1]]
        p.wv[0].data[:] = [[0.9, -0.4], [0.1, 0.6]]
        x = [[0.2, -1.0], [1.3, 0.4]]
        h = [[-0.7, 0.5], [0.8, -0.2]]
        out, _ = assignment_context(T.constant(np.array(x)), T.constant(np.array(h)), p)
        want = oracles.multi_head_loops(
            h, x + h,
            [p.wq[0].data.tolist()], [p.wk[0].data.tolist()], [p.wv[0].data.tolist()],
        )
        assert np.abs(out.data - np.array(want)).max() < 1e-12

    def test_weight_rows_sum_to_one(self, rng):
        store, p = _params(8, 4, seed=7)
        for _ in range(5):
            x = T.constant(rng.standard_normal((6, 8)) * 3)
            h = T.constant(rng.standard_normal((4, 8)) * 3)
            _, weights = assignment_context(x, h, p)
            assert weights.weights.shape == (4, 4, 10)
            assert np.abs(weights.weights.sum(axis=2) - 1.0).max() < 1e-9
            assert weights.weights.min() >= 0.0

    def test_gradients_pass_check(self, rng):
        store = T.ParamStore()
        p = MultiHeadParams(store, "attn", 4, 2, np.random.default_rng(8))
        x = T.constant(rng.standard_normal((3, 4)))
        h = T.constant(rng.standard_normal((3, 4)))
        probe = T.constant(rng.standard_normal((3, 4)))

        def loss():
            c, _ = assignment_context(x, h, p)
            return T.sum_all(T.mul(c, probe))

        assert T.grad_check(loss, store, eps=1e-6) < 1e-4

    def test_column_layout_inputs_first(self, rng):
        store, p = _params(4, 2, seed=9)
        x = T.constant(rng.standard_normal((2, 4)))
        h = T.constant(rng.standard_normal((3, 4)))
        _, weights = assignment_context(x, h, p)
        assert weights.n_inputs == 2
        assert weights.n_states == 3
        assert weights.column_labels() == ["x0", "x1", "h0", "h1", "h2"]


class TestWeightExport:
    def test_csv_contains_labels_and_rows(self, rng, tmp_path):
        w = AttentionWeights(weights=rng.random((2, 3, 5)), n_inputs=2)
        path = tmp_path / "attn.csv"
        w.write_csv(path, 0)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "slot,x0,x1,h0,h1,h2"
        assert len(lines) == 4

    def test_head_mean(self, rng):
        w = AttentionWeights(weights=rng.random((4, 2, 6)), n_inputs=3)
        assert np.abs(w.head_mean() - w.weights.mean(axis=0)).max() == 0.0
