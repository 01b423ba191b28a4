import itertools

import numpy as np
import pytest

import oracles
from pitrack import tensor as T
from pitrack.recurrent import (
    BaselineModel,
    ConfigError,
    GruParams,
    ModelConfig,
    PirnnModel,
    PirnnState,
    accdoa_active,
    accdoa_norms,
    baseline_param_shapes,
    count_params,
    embed_inputs,
    gated_update,
    gru_cell,
    param_match,
    pirnn_param_shapes,
    pirnn_step,
    track_sequence,
)


def tiny_model(slots=5, d=8, heads=2, seed=0):
    cfg = ModelConfig(slots=slots, d=d, n_heads=heads, gru_width=d, mlp_hidden=d)
    return PirnnModel(cfg, rng=np.random.default_rng(seed))


def _zeroed(store, names):
    for name in names:
        store[name].data[:] = 0.0


class TestGatedUpdate:
    def test_zero_weights_closed_form(self, rng):
        h = rng.standard_normal((4, 3))
        c = rng.standard_normal((4, 3))
        store = T.ParamStore()
        wz = store.add("wz", np.zeros((3, 3)))
        wh = store.add("wh", np.zeros((3, 3)))
        out = gated_update(T.constant(c), T.constant(h), wz, wh)
        assert np.abs(out.data - 0.5 * h).max() < 1e-15

    def test_slotwise_permutation(self, rng):
        c = rng.standard_normal((5, 3))
        h = rng.standard_normal((5, 3))
        store = T.ParamStore()
        wz = store.add("wz", rng.standard_normal((3, 3)))
        wh = store.add("wh", rng.standard_normal((3, 3)))
        base = gated_update(T.constant(c), T.constant(h), wz, wh)
        sigma = rng.permutation(5)
        permuted = gated_update(T.constant(c[sigma]), T.constant(h[sigma]), wz, wh)
        assert np.array_equal(permuted.data, base.data[sigma])

    def test_scalar_loop_oracle(self, rng):
        c = rng.standard_normal((2, 3))
        h = rng.standard_normal((2, 3))
        wz = rng.standard_normal((3, 3))
        wh = rng.standard_normal((3, 3))
        store = T.ParamStore()
        out = gated_update(
            T.constant(c), T.constant(h), store.add("wz", wz), store.add("wh", wh)
        )
        want = oracles.gated_update_loops(c.tolist(), h.tolist(), wz.tolist(), wh.tolist())
        assert np.abs(out.data - np.array(want)).max() < 1e-12

    def test_candidate_gate_variant(self, rng):
        c = rng.standard_normal((3, 2))
        h = rng.standard_normal((3, 2))
        store = T.ParamStore()
        wz = store.add("wz", rng.standard_normal((2, 2)))
        wh = store.add("wh", rng.standard_normal((2, 2)))
        plain = gated_update(T.constant(c), T.constant(h), wz, wh, gate_candidate=False)
        gated = gated_update(T.constant(c), T.constant(h), wz, wh, gate_candidate=True)
        z = 1.0 / (1.0 + np.exp(-(c @ wz.data)))
        cand = np.tanh(c @ wh.data)
        assert np.abs(plain.data - ((1 - z) * h + cand)).max() < 1e-12
        assert np.abs(gated.data - ((1 - z) * h + z * cand)).max() < 1e-12


class TestGruCell:
    def test_zero_weights_halve_state(self, rng):
        store = T.ParamStore()
        p = GruParams(store, "g", 3, 4, np.random.default_rng(0))
        for name in store.names():
            store[name].data[:] = 0.0
        g_prev = rng.standard_normal((2, 4))
        out = gru_cell(T.constant(rng.standard_normal((2, 3))), T.constant(g_prev), p)
        assert np.abs(out.data - 0.5 * g_prev).max() < 1e-15

    def test_zero_everything_is_zero(self):
        store = T.ParamStore()
        p = GruParams(store, "g", 3, 4, np.random.default_rng(0))
        for name in store.names():
            store[name].data[:] = 0.0
        out = gru_cell(T.constant(np.zeros((1, 3))), T.constant(np.zeros((1, 4))), p)
        assert np.array_equal(out.data, np.zeros((1, 4)))

    def test_gradient_check(self, rng):
        store = T.ParamStore()
        p = GruParams(store, "g", 3, 3, np.random.default_rng(1))
        x = store.add("x", rng.standard_normal((2, 3)))
        g = store.add("g0", rng.standard_normal((2, 3)))

        def loss():
            out = gru_cell(x, g, p)
            return T.sum_all(T.mul(out, out))

        assert T.grad_check(loss, store, eps=1e-6) < 1e-4

    def test_scalar_loop_oracle(self, rng):
        store = T.ParamStore()
        p = GruParams(store, "g", 2, 2, np.random.default_rng(2))
        x = rng.standard_normal((1, 2))
        g = rng.standard_normal((1, 2))
        out = gru_cell(T.constant(x), T.constant(g), p)
        weights = {
            key: getattr(p, key).data.tolist()
            for key in ("wr", "ur", "br", "wu", "uu", "bu", "wn", "un", "bn")
        }
        want = oracles.gru_loops(x[0].tolist(), g[0].tolist(), weights)
        assert np.abs(out.data[0] - np.array(want)).max() < 1e-12


class TestEmbedInputs:
    def test_identical_detections_identical_rows(self, rng):
        model = tiny_model()
        det = rng.standard_normal(3)
        frame = np.vstack([det, rng.standard_normal(3), det, det, rng.standard_normal(3)])
        out = embed_inputs(frame, model.embed_w1, model.embed_b1, model.embed_w2, model.embed_b2)
        assert np.array_equal(out.data[0], out.data[2])
        assert np.array_equal(out.data[0], out.data[3])

    def test_permutation_permutes_rows(self, rng):
        model = tiny_model()
        frame = rng.standard_normal((5, 3))
        base = embed_inputs(frame, model.embed_w1, model.embed_b1, model.embed_w2, model.embed_b2)
        sigma = rng.permutation(5)
        permuted = embed_inputs(
            frame[sigma], model.embed_w1, model.embed_b1, model.embed_w2, model.embed_b2
        )
        assert np.array_equal(permuted.data, base.data[sigma])

    def test_zero_weights_bias_only(self, rng):
        model = tiny_model()
        _zeroed(model.params, ["embed.w1", "embed.w2", "embed.b1"])
        model.params["embed.b2"].data[:] = rng.standard_normal((1, 8))
        out = embed_inputs(
            rng.standard_normal((5, 3)),
            model.embed_w1, model.embed_b1, model.embed_w2, model.embed_b2,
        )
        want = model.params["embed.b2"].data[0]
        for row in out.data:
            assert np.array_equal(row, want)

    def test_matches_scalar_loops(self, rng):
        model = tiny_model(d=4, heads=2, seed=3)
        frame = rng.standard_normal((3, 3))
        out = embed_inputs(frame, model.embed_w1, model.embed_b1, model.embed_w2, model.embed_b2)
        want = oracles.mlp_loops(
            frame.tolist(),
            model.embed_w1.data.tolist(), model.embed_b1.data.tolist(),
            model.embed_w2.data.tolist(), model.embed_b2.data.tolist(),
        )
        assert np.abs(out.data - np.array(want)).max() < 1e-12


class TestPirnnStep:
    def test_input_permutation_invariance(self, rng):
        model = tiny_model()
        state = model.initial_state()
        det = rng.standard_normal((5, 3))
        base, _, _ = pirnn_step(det, state, model)
        for perm in itertools.permutations(range(5)):
            out, _, _ = pirnn_step(det[list(perm)], state, model)
            assert np.abs(out.data - base.data).max() < 1e-9

    def test_state_permutation_equivariance(self, rng):
        model = tiny_model()
        h = rng.standard_normal((5, 8))
        g = rng.standard_normal((5, 8))
        det = rng.standard_normal((5, 3))
        # keep the reset path equivariant too: permute learned initials along
        init = model.init_h.data.copy()
        base, _, _ = pirnn_step(det, PirnnState(T.constant(h), T.constant(g)), model)
        for _ in range(5):
            sigma = rng.permutation(5)
            model.init_h.data[:] = init[sigma]
            out, _, _ = pirnn_step(det, PirnnState(T.constant(h[sigma]), T.constant(g[sigma])), model)
            assert np.abs(out.data - base.data[sigma]).max() < 1e-9
        model.init_h.data[:] = init

    def test_matches_full_scalar_oracle(self, rng):
        cfg = ModelConfig(slots=2, d=2, n_heads=1, gru_width=2, mlp_hidden=2)
        model = PirnnModel(cfg, rng=np.random.default_rng(11))
        det = rng.standard_normal((2, 3))
        h = rng.standard_normal((2, 2))
        g = rng.standard_normal((2, 2))
        out, state, _ = pirnn_step(det, PirnnState(T.constant(h), T.constant(g)), model)
        p = model.params
        params = {
            "embed": (
                p["embed.w1"].data.tolist(), p["embed.b1"].data.tolist(),
                p["embed.w2"].data.tolist(), p["embed.b2"].data.tolist(),
            ),
            "heads": (
                [p["attn.h0.wq"].data.tolist()],
                [p["attn.h0.wk"].data.tolist()],
                [p["attn.h0.wv"].data.tolist()],
            ),
            "gate": (p["gate.wz"].data.tolist(), p["gate.wh"].data.tolist()),
            "gru": {
                key: p[f"gru.{key}"].data.tolist()
                for key in ("wr", "ur", "br", "wu", "uu", "bu", "wn", "un", "bn")
            },
            "head": (p["head.w"].data.tolist(), p["head.b"].data.tolist()),
        }
        want_out, want_h, want_g = oracles.pirnn_step_loops(
            det.tolist(), h.tolist(), g.tolist(), model.init_h.data.tolist(), params
        )
        assert np.abs(out.data - np.array(want_out)).max() < 1e-10
        assert np.abs(state.h_set.data - np.array(want_h)).max() < 1e-10
        assert np.abs(state.g_set.data - np.array(want_g)).max() < 1e-10

    def test_reset_restores_learned_initial_exactly(self, rng):
        model = tiny_model(seed=4)
        # zero head weights make every output the head bias: norm below 0.5
        _zeroed(model.params, ["head.w", "head.b"])
        det = rng.standard_normal((5, 3))
        out, state, _ = pirnn_step(det, model.initial_state(), model)
        assert not accdoa_active(out.data).any()
        assert np.array_equal(state.h_set.data, model.init_h.data)
        assert np.array_equal(state.g_set.data, np.zeros((5, 8)))

    def test_active_slots_keep_updated_state(self, rng):
        model = tiny_model(seed=5)
        _zeroed(model.params, ["head.w"])
        model.params["head.b"].data[:] = [[0.9, 0.0, 0.0]]  # all outputs active
        det = rng.standard_normal((5, 3))
        _, state, _ = pirnn_step(det, model.initial_state(), model)
        assert not np.array_equal(state.h_set.data, model.init_h.data)


class TestTrackSequence:
    def test_single_frame_equals_one_step(self, rng):
        model = tiny_model(seed=6)
        frames = rng.standard_normal((1, 5, 3))
        seq_out, _ = track_sequence(frames, model)
        step_out, _, _ = pirnn_step(frames[0], model.initial_state(), model)
        assert np.array_equal(seq_out[0].data, step_out.data)

    def test_deterministic_repeat(self, rng):
        model = tiny_model(seed=7)
        frames = np.tile(rng.standard_normal((1, 5, 3)), (2, 1, 1))
        a, _ = track_sequence(frames, model)
        b, _ = track_sequence(frames, model)
        for x, y in zip(a, b):
            assert np.array_equal(x.data, y.data)

    def test_sequence_equivariance_under_initial_permutation(self, rng):
        model = tiny_model(seed=8)
        frames = rng.standard_normal((6, 5, 3))
        base, _ = track_sequence(frames, model)
        sigma = rng.permutation(5)
        model.init_h.data[:] = model.init_h.data[sigma]
        permuted, _ = track_sequence(frames, model)
        for x, y in zip(base, permuted):
            assert np.abs(y.data - x.data[sigma]).max() < 1e-9

    def test_attention_export_shapes(self, rng):
        model = tiny_model(seed=9)
        frames = rng.standard_normal((3, 5, 3))
        outs, attn = model.forward(frames, collect_attention=True)
        assert len(outs) == len(attn) == 3
        assert attn[0].weights.shape == (2, 5, 10)


class TestBaseline:
    def test_zero_weights_bias_only_and_frame_independent(self, rng):
        cfg = ModelConfig(slots=4, d=8, n_heads=2, gru_width=8, mlp_hidden=8,
                          baseline_width=6)
        model = BaselineModel(cfg, rng=np.random.default_rng(0))
        for name in model.params.names():
            model.params[name].data[:] = 0.0
        model.params["bl.head.b"].data[:] = rng.standard_normal((1, 12))
        outs = model.forward(rng.standard_normal((3, 4, 3)))
        want = model.params["bl.head.b"].data.reshape(4, 3)
        for out in outs:
            assert np.array_equal(out.data, want)

    def test_some_permutation_changes_output(self, rng):
        cfg = ModelConfig(slots=4, d=8, n_heads=2, gru_width=8, mlp_hidden=8,
                          baseline_width=8)
        model = BaselineModel(cfg, rng=np.random.default_rng(1))
        frames = rng.standard_normal((2, 4, 3))
        base = model.forward(frames)
        deviation = 0.0
        for perm in itertools.permutations(range(4)):
            permuted = model.forward(frames[:, list(perm), :])
            deviation = max(
                deviation,
                max(np.abs(o.data - b.data).max() for o, b in zip(permuted, base)),
            )
        assert deviation > 1e-3

    def test_parameter_count_matches_shape_arithmetic(self):
        shapes = baseline_param_shapes(10, 31)
        total = count_params(shapes)
        width = 31
        expected = 3 * (30 * width + width * width + width) \
            + 3 * (2 * width * width + width) + width * 30 + 30
        assert total == expected
        cfg = ModelConfig(slots=10, d=32, n_heads=4, gru_width=32, mlp_hidden=32,
                          baseline_width=31)
        model = BaselineModel(cfg, rng=np.random.default_rng(2))
        assert model.params.total_count() == expected


class TestParamMatch:
    def test_desk_config_within_band(self):
        cfg = ModelConfig(slots=10, d=32, n_heads=4, gru_width=32, mlp_hidden=32)
        width = param_match(cfg)
        target = count_params(pirnn_param_shapes(cfg))
        got = count_params(baseline_param_shapes(cfg.slots, width))
        assert 0.95 * target <= got <= 1.10 * target

    def test_attention_and_gate_params_quadratic_in_width(self):
        def attn_gate_count(d):
            cfg = ModelConfig(slots=10, d=d, n_heads=4, gru_width=d, mlp_hidden=d)
            shapes = pirnn_param_shapes(cfg)
            return sum(
                int(np.prod(s)) for name, s in shapes.items()
                if name.startswith(("attn.", "gate."))
            )

        ratio = attn_gate_count(64) / attn_gate_count(32)
        assert 3.0 <= ratio <= 4.5

    def test_matched_width_nondecreasing_in_d(self):
        widths = []
        for d in (16, 32, 64, 128):
            cfg = ModelConfig(slots=10, d=d, n_heads=4, gru_width=d, mlp_hidden=d)
            widths.append(param_match(cfg))
        assert widths == sorted(widths)


class TestModelConfig:
    def test_reset_threshold_validated(self):
        with pytest.raises(ConfigError):
            ModelConfig(reset_threshold=1.5)

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(d=30, n_heads=4)

    def test_accdoa_helpers(self):
        vecs = np.array([[1.0, 0.0, 0.0], [0.1, 0.2, 0.0]])
        assert np.array_equal(accdoa_norms(vecs).round(6), [1.0, 0.223607])
        assert np.array_equal(accdoa_active(vecs), [True, False])


class TestFullModelGradient:
    def test_unrolled_sequence_gradient(self, rng):
        from pitrack import losses

        cfg = ModelConfig(slots=3, d=4, n_heads=2, gru_width=4, mlp_hidden=4)
        model = PirnnModel(cfg, rng=np.random.default_rng(12))
        frames = rng.standard_normal((3, 3, 3)) * 0.7
        targets = []
        for t in range(3):
            doas = rng.standard_normal((2, 3))
            doas /= np.linalg.norm(doas, axis=1, keepdims=True)
            targets.append((np.array([0, 1]), doas))

        def loss():
            outs, _ = model.forward(frames)
            return losses.spit_loss(outs, targets, 1)

        assert T.grad_check(loss, model.params, eps=1e-5) < 1e-4

    def test_checkpoint_reload_reproduces_model(self, rng, tmp_path):
        cfg = ModelConfig(slots=4, d=8, n_heads=2, gru_width=8, mlp_hidden=8)
        model = PirnnModel(cfg, rng=np.random.default_rng(13))
        path = tmp_path / "ckpt.json"
        model.params.save(path)
        loaded = PirnnModel(cfg, store=T.ParamStore.load(path, PirnnModel.schema(cfg)))
        frames = rng.standard_normal((4, 4, 3))
        a, _ = model.forward(frames)
        b, _ = loaded.forward(frames)
        for x, y in zip(a, b):
            assert np.array_equal(x.data, y.data)

    def test_wrong_schema_rejected(self, rng, tmp_path):
        cfg = ModelConfig(slots=4, d=8, n_heads=2, gru_width=8, mlp_hidden=8)
        other = ModelConfig(slots=4, d=16, n_heads=2, gru_width=16, mlp_hidden=16)
        model = PirnnModel(cfg, rng=np.random.default_rng(14))
        path = tmp_path / "ckpt.json"
        model.params.save(path)
        with pytest.raises(T.CheckpointError):
            T.ParamStore.load(path, PirnnModel.schema(other))
