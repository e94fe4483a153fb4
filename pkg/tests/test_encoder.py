import numpy as np
import pytest

from gaitgate import signal
from gaitgate.encoder import (
    EncoderConfig,
    GaitModel,
    ParameterSet,
    assert_unit_norm,
    cosine_distance,
    cosine_similarity,
    forward,
    forward_batch,
    init_params,
)

CFG = EncoderConfig(input_shape=(65, 14), conv_channels=(4, 8), embedding_dim=16, init_seed=11)


def rand_specs(n, shape=(65, 14), seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, *shape)).astype(np.float32)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_params(CFG)
        b = init_params(CFG)
        assert a.names == b.names
        for k in a.names:
            assert np.array_equal(a[k], b[k])

    def test_different_seed_differs(self):
        a = init_params(CFG)
        b = init_params(EncoderConfig(
            input_shape=(65, 14), conv_channels=(4, 8), embedding_dim=16, init_seed=12
        ))
        assert any(not np.array_equal(a[k], b[k]) for k in a.names)

    def test_he_uniform_bounds(self):
        p = init_params(CFG)
        for name in p.names:
            t = p[name]
            if name.endswith("/b"):
                assert not t.any()
                continue
            # conv kernels are (out, in, k, k); the dense matrix is (features, dim)
            fan_in = int(np.prod(t.shape[1:])) if name.startswith("conv") else t.shape[0]
            limit = np.sqrt(6.0 / fan_in)
            assert np.abs(t).max() <= limit

    def test_layer_order(self):
        assert init_params(CFG).names == [
            "conv0/w", "conv0/b", "conv1/w", "conv1/b", "dense/w", "dense/b",
        ]

    def test_default_dtype_float32(self):
        p = init_params(CFG)
        assert all(p[k].dtype == np.float32 for k in p.names)


class TestParameterSet:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="bad"):
            ParameterSet({"bad": np.array([1.0, np.nan])})

    def test_astype_roundtrip(self):
        p = init_params(CFG)
        q = p.astype(np.float64).astype(np.float32)
        assert p.allclose(q)

    def test_allclose_name_mismatch(self):
        p = init_params(CFG)
        q = ParameterSet({"conv0/w": p["conv0/w"]})
        assert not p.allclose(q)


class TestStageShapes:
    def test_default_input(self):
        cfg = EncoderConfig(input_shape=(65, 14))
        assert cfg.stage_shapes == [(32, 7), (16, 3), (8, 1)]

    def test_narrow_input_keeps_unit_dims(self):
        # a 4 s window gives 5 frames; width bottoms out at 1 and stays there
        cfg = EncoderConfig(input_shape=(65, 5))
        assert cfg.stage_shapes == [(32, 2), (16, 1), (8, 1)]

    def test_from_params_recovers_config(self):
        p = init_params(CFG)
        rec = EncoderConfig.from_params(p, input_shape=(65, 14))
        assert rec.conv_channels == CFG.conv_channels
        assert rec.embedding_dim == CFG.embedding_dim


class TestForward:
    def test_unit_norm(self):
        p = init_params(CFG)
        z = forward_batch(p, rand_specs(8))
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)

    def test_repeatable(self):
        p = init_params(CFG)
        x = rand_specs(4, seed=1)
        assert np.array_equal(forward_batch(p, x), forward_batch(p, x))

    def test_batch_of_one_equals_forward(self):
        p = init_params(CFG)
        x = rand_specs(1, seed=2)
        single = forward(p, signal.Spectrogram(data=x[0].astype(np.float64)))
        batch = forward_batch(p, x)[0]
        assert np.allclose(single, batch, atol=1e-6)

    def test_permuted_batch_permutes_outputs(self):
        p = init_params(CFG)
        x = rand_specs(6, seed=3)
        perm = np.array([4, 2, 0, 5, 1, 3])
        a = forward_batch(p, x)[perm]
        b = forward_batch(p, x[perm])
        assert np.array_equal(a, b)

    def test_batch_matches_sequential(self):
        p = init_params(CFG)
        x = rand_specs(64, seed=4)
        batched = forward_batch(p, x)
        sequential = np.stack([forward_batch(p, x[i : i + 1])[0] for i in range(64)])
        assert np.array_equal(batched, sequential)

    def test_degenerate_zero_input_raises(self):
        p = init_params(CFG)
        x = rand_specs(3, seed=5)
        x[1] = 0.0  # zero spec + zero biases: pre-normalization vector is 0
        with pytest.raises(ValueError, match="1"):
            forward_batch(p, x)


class TestCosine:
    def test_identical(self):
        u = np.array([0.6, 0.8])
        assert cosine_similarity(u, u) == pytest.approx(1.0)
        assert cosine_distance(u, u) == pytest.approx(0.0)

    def test_orthogonal(self):
        u = np.array([1.0, 0.0])
        v = np.array([0.0, 1.0])
        assert cosine_similarity(u, v) == pytest.approx(0.0)
        assert cosine_distance(u, v) == pytest.approx(1.0)

    def test_opposite(self):
        u = np.array([0.0, 2.0])
        assert cosine_similarity(u, -u) == pytest.approx(-1.0)
        assert cosine_distance(u, -u) == pytest.approx(2.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_assert_unit_norm(self):
        assert_unit_norm(np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            assert_unit_norm(np.array([1.0, 1.0]))


class TestGaitModel:
    def model(self):
        return GaitModel(init_params(CFG), CFG, signal.StftConfig())

    def test_embed_specs_unit_norm(self):
        z = self.model().embed_specs(rand_specs(5, seed=6))
        assert z.shape == (5, 16)
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)

    def test_embed_specs_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"60.*14.*65.*14"):
            self.model().embed_specs(np.zeros((2, 60, 14), dtype=np.float32))

    def test_embed_series_window_count(self):
        rng = np.random.default_rng(7)
        n = 3000
        xyz = rng.normal(0.0, 0.05, size=(n, 3)) + np.array([0.0, 0.0, 1.0])
        series = signal.AccelSeries(t=np.arange(n) / 100.0, xyz=xyz, fs=100.0)
        embs, intervals = self.model().embed_series(series, 10.0, 0.5)
        assert embs.shape == (5, 16)
        assert intervals.shape == (5, 2)
        assert np.allclose(intervals[:, 0], [0.0, 5.0, 10.0, 15.0, 20.0])
