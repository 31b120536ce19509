import numpy as np
import pytest

from seqnrsfm import diffcore as dc
from seqnrsfm import geometry as geo
from seqnrsfm import losses
from seqnrsfm import model as mdl
from seqnrsfm.diffcore import Tape


def tiny_config(**kw):
    base = dict(points=3, seq_max=5, enc_width=8, enc_layers=2, bottleneck=4,
                embed_dim=6, heads=2, dec_width=8, canon_width=8)
    base.update(kw)
    return mdl.ModelConfig(**base)


def make_params(cfg, seed=0, dtype=np.float64):
    return mdl.init_model(cfg, np.random.default_rng(seed), dtype=dtype)


def zero_biases(params):
    for name, leaf in mdl.iter_params(params):
        if name.endswith(".b"):
            leaf[...] = 0.0


class TestConfig:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ValueError, match="divisible"):
            tiny_config(embed_dim=7, heads=2)

    def test_default_dimensions(self):
        cfg = mdl.ModelConfig(points=15)
        assert (cfg.enc_width, cfg.bottleneck, cfg.embed_dim, cfg.heads,
                cfg.seq_max) == (1024, 10, 408, 8, 32)
        assert cfg.embed_dim // cfg.heads == 51


class TestParamPlumbing:
    def test_iter_and_bind_round_trip(self):
        cfg = tiny_config()
        params = make_params(cfg)
        names = [n for n, _ in mdl.iter_params(params)]
        assert len(names) == len(set(names))
        bound = mdl.bind(params, Tape())
        for (n1, arr), (n2, var) in zip(mdl.iter_params(params),
                                        mdl.iter_params(bound)):
            assert n1 == n2
            assert var.value is arr

    def test_shape_head_bottleneck_width(self):
        cfg = mdl.ModelConfig(points=15)
        params = make_params(cfg, dtype=np.float32)
        assert params.predictor.shape_head[0].w.shape == (1024, 10)
        assert params.predictor.shape_head[1].w.shape == (10, 45)

    def test_sinusoidal_encoding_values(self):
        g = mdl.sinusoidal_encoding(4, 6)
        assert g[0, 0] == 0.0                      # sin(0)
        assert np.max(np.abs(g[0])) == 0.0         # whole first row
        t, j = 3, 2
        assert np.isclose(g[t, j], np.sin(t / 10000 ** (j / 6)))


class TestPredictFrame:
    def test_zero_frame_with_zero_heads(self):
        cfg = tiny_config()
        params = make_params(cfg)
        for lin in params.predictor.shape_head:
            lin.w[...] = 0.0
            lin.b[...] = 0.0
        params.predictor.shape_head[1].b[...] = np.arange(9.0)
        params.predictor.motion_head.w[...] = 0.0
        params.predictor.motion_head.b[...] = 0.0
        bound = mdl.bind(params, None)
        v, coarse = mdl.predict_frame(np.zeros((2, 3)), bound.predictor)
        assert np.array_equal(v.value, np.zeros(3))
        assert np.array_equal(coarse.value, np.arange(9.0))

    def test_repeatable(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg), None)
        w = np.random.default_rng(1).normal(size=(2, 3))
        w -= w.mean(axis=1, keepdims=True)
        a = mdl.predict_frame(w, bound.predictor)
        b = mdl.predict_frame(w, bound.predictor)
        assert np.array_equal(a[0].value, b[0].value)
        assert np.array_equal(a[1].value, b[1].value)

    def test_non_finite_input_rejected(self):
        bound = mdl.bind(make_params(tiny_config()), None)
        bad = np.full((2, 3), np.nan)
        with pytest.raises(ValueError, match="non-finite"):
            mdl.predict_frame(bad, bound.predictor)


class TestTemporalEncode:
    def test_zero_coarse_isolates_gamma_and_bias(self):
        cfg = tiny_config()
        params = make_params(cfg)
        bound = mdl.bind(params, None)
        coarse = dc.constant(np.zeros((4, 9)))
        x = mdl.temporal_encode(coarse, bound.context)
        expected = params.context.gamma[:4] + params.context.embed.b
        assert np.allclose(x.value, expected, atol=1e-15)

    def test_positions_disambiguate_identical_rows(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg), None)
        row = np.random.default_rng(2).normal(size=9)
        coarse = dc.constant(np.stack([row, row, row]))
        x = mdl.temporal_encode(coarse, bound.context).value
        assert not np.allclose(x[0], x[1])
        assert not np.allclose(x[1], x[2])

    def test_capacity_overflow_raises(self):
        cfg = tiny_config(seq_max=3)
        bound = mdl.bind(make_params(cfg), None)
        coarse = dc.constant(np.zeros((4, 9)))
        with pytest.raises(ValueError, match="longer than trained encoding"):
            mdl.temporal_encode(coarse, bound.context)


class TestMhaBlock:
    def test_singleton_sequence_attention_is_one(self):
        cfg = tiny_config()
        params = make_params(cfg)
        bound = mdl.bind(params, None)
        x = dc.constant(np.random.default_rng(3).normal(size=(1, 6)))
        out, weights = mdl.mha_block(x, bound.context, with_weights=True)
        for w in weights:
            assert np.array_equal(w, [[1.0]])
        # output equals the W_O projection of the concatenated value rows
        vals = [x.value @ hv.w + hv.b for hv in params.context.wv]
        manual = np.concatenate(vals, axis=-1) @ params.context.wo.w \
            + params.context.wo.b
        assert np.allclose(out.value, manual, atol=1e-12)

    def test_zero_input_zero_bias_gives_zero(self):
        cfg = tiny_config()
        params = make_params(cfg)
        zero_biases(params)
        bound = mdl.bind(params, None)
        out = mdl.mha_block(dc.constant(np.zeros((3, 6))), bound.context)
        assert np.allclose(out.value, 0.0, atol=1e-15)

    def test_matches_dense_reference(self):
        cfg = tiny_config(points=2, embed_dim=8, heads=2)
        params = make_params(cfg, seed=5)
        bound = mdl.bind(params, None)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 8))
        out, weights = mdl.mha_block(dc.constant(x), bound.context,
                                     with_weights=True)

        heads = []
        for i, (hq, hk, hv) in enumerate(zip(params.context.wq,
                                             params.context.wk,
                                             params.context.wv)):
            q = x @ hq.w + hq.b
            k = x @ hk.w + hk.b
            v = x @ hv.w + hv.b
            scores = q @ k.T / np.sqrt(8.0)
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            attn = e / e.sum(axis=1, keepdims=True)
            assert np.max(np.abs(attn - weights[i])) < 1e-6
            heads.append(attn @ v)
        manual = (np.concatenate(heads, axis=-1) @ params.context.wo.w
                  + params.context.wo.b)
        assert np.max(np.abs(out.value - manual)) < 1e-6

    def test_attention_rows_sum_to_one(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg), None)
        x = dc.constant(np.random.default_rng(7).normal(size=(5, 6)) * 3)
        _, weights = mdl.mha_block(x, bound.context, with_weights=True)
        for w in weights:
            assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-5
            assert np.all(w >= 0)


class TestDecodeAndForward:
    def test_decode_shapes_output_shape(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg), None)
        for l in (1, 3, 5):
            x = dc.constant(np.zeros((l, 6)))
            assert mdl.decode_shapes(x, bound.context).value.shape == (l, 9)

    def test_forward_shapes_for_all_lengths(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg), None)
        rng = np.random.default_rng(8)
        for l in range(1, cfg.seq_max + 1):
            w = geo.center_frames(rng.normal(size=(l, 2, 3)))
            rots, shapes, coarse = mdl.forward_sequence(w, bound, cfg)
            assert len(rots) == l
            assert shapes.value.shape == (l, 9)
            assert coarse.value.shape == (l, 9)
            for r in rots:
                assert geo.is_rotation(r.value, tol=1e-9)

    def test_forward_is_deterministic(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg), None)
        w = geo.center_frames(np.random.default_rng(9).normal(size=(4, 2, 3)))
        a = mdl.forward_sequence(w, bound, cfg)[1].value
        b = mdl.forward_sequence(w, bound, cfg)[1].value
        assert np.array_equal(a, b)

    def test_rotations_orthonormal_in_float32(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg, dtype=np.float32), None)
        w = geo.center_frames(
            np.random.default_rng(10).normal(size=(4, 2, 3)))
        rots, _, _ = mdl.forward_sequence(w, bound, cfg)
        for r in rots:
            m = r.value.astype(np.float64)
            assert np.max(np.abs(m.T @ m - np.eye(3))) < 1e-5

    def test_permutation_changes_outputs_with_gamma(self):
        cfg = tiny_config()
        bound = mdl.bind(make_params(cfg, seed=11), None)
        rng = np.random.default_rng(11)
        w = geo.center_frames(rng.normal(size=(5, 2, 3)))
        perm = np.array([3, 1, 4, 0, 2])
        s1 = mdl.forward_sequence(w, bound, cfg)[1].value
        s2 = mdl.forward_sequence(w[perm], bound, cfg)[1].value
        assert not np.allclose(s1[perm], s2, atol=1e-9)

    def test_zeroed_gamma_and_biases_restore_equivariance(self):
        cfg = tiny_config()
        params = make_params(cfg, seed=12)
        params.context.gamma[...] = 0.0
        zero_biases(params)
        bound = mdl.bind(params, None)
        rng = np.random.default_rng(12)
        w = geo.center_frames(rng.normal(size=(5, 2, 3)))
        perm = np.array([4, 2, 0, 3, 1])
        s1 = mdl.forward_sequence(w, bound, cfg)[1].value
        s2 = mdl.forward_sequence(w[perm], bound, cfg)[1].value
        assert np.allclose(s1[perm], s2, atol=1e-10)

    def test_gradient_reaches_every_parameter_group(self):
        cfg = tiny_config()
        params = make_params(cfg, seed=13)
        tape = Tape()
        bound = mdl.bind(params, tape)
        rng = np.random.default_rng(13)
        w = geo.center_frames(rng.normal(size=(4, 2, 3)))
        rots, shapes, _ = mdl.forward_sequence(w, bound, cfg)
        weights = losses.LossWeights(alpha=0.1, lam=0.1, m_samples=2)
        total, _ = losses.total_loss(w, rots, shapes, weights, bound.canon,
                                     np.random.default_rng(0))
        dc.backward(tape, total)
        for name, var in mdl.iter_params(bound):
            grad = var.grad
            assert grad is not None, "no gradient for %s" % name
            if name == "context.gamma":
                grad = grad[:4]
            assert np.linalg.norm(grad) > 0, "zero gradient for %s" % name


class TestCanonicalize:
    def test_identity_initialized_network_is_identity(self):
        cfg = tiny_config()
        params = make_params(cfg, seed=14)
        params.canon.layers[2].w[...] = 0.0
        params.canon.layers[2].b[...] = 0.0
        bound = mdl.bind(params, None)
        s = dc.constant(np.random.default_rng(14).normal(size=(3, 9)))
        out = mdl.canonicalize(s, [np.eye(3)], bound.canon)
        assert np.array_equal(out[0].value, s.value)

    def test_rotate_rows_matches_per_frame_rotation(self):
        rng = np.random.default_rng(15)
        r = geo.random_rotation(rng)
        sharp = rng.normal(size=(4, 9))
        out = mdl.rotate_rows(dc.constant(sharp), r).value
        stacked = geo.unshuffle(sharp)
        expected = geo.reshuffle(
            np.concatenate([r @ f for f in geo.frames_of(stacked)]))
        assert np.allclose(out, expected, atol=1e-12)

    def test_gradient_flows_to_canon_and_upstream(self):
        cfg = tiny_config()
        params = make_params(cfg, seed=16)
        tape = Tape()
        bound = mdl.bind(params, tape)
        s = dc.Var(np.random.default_rng(16).normal(size=(3, 9)), tape)
        rots = [geo.random_rotation(np.random.default_rng(17))]
        out = mdl.canonicalize(s, rots, bound.canon)[0]
        dc.backward(tape, dc.sum(dc.square(dc.sub(s, out))))
        assert np.linalg.norm(s.grad) > 0
        assert np.linalg.norm(bound.canon.layers[0].w.grad) > 0
