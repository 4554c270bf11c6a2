import numpy as np
import pytest

from alschange import segnet
from alschange import tensor_nn as nn
from alschange.errors import (BadConfig, BadMagic, ChecksumMismatch, EmptyDataset,
                              ShapeMismatch, VersionMismatch)
from alschange.raster import NormStats

TINY = segnet.ModelConfig(streams=1, encoder_widths=(2, 2, 2), bottleneck_width=4,
                          patch_size=16, seed=3)
TINY_DUAL = segnet.ModelConfig(streams=2, encoder_widths=(2, 2, 2), bottleneck_width=4,
                               patch_size=16, seed=3)


def tiny_dataset(rng, n, channels=3, size=16):
    out = []
    for _ in range(n):
        data = rng.uniform(size=(channels, size, size))
        mask = (rng.random((size, size)) > 0.5).astype(float)
        out.append((data, mask))
    return out


class TestBuildModel:
    def test_default_forward_shape(self):
        model = segnet.build_model(segnet.ModelConfig())
        x = np.random.default_rng(0).uniform(size=(1, 3, 128, 128)).astype(np.float32)
        prob, _ = segnet.forward(model, x)
        assert prob.shape == (1, 1, 128, 128)
        assert (prob > 0).all() and (prob < 1).all()

    def test_param_count_formula(self):
        for cfg in (segnet.ModelConfig(), segnet.ModelConfig(streams=2), TINY, TINY_DUAL):
            model = segnet.build_model(cfg)
            assert model.param_count() == segnet.expected_param_count(cfg)

    def test_dual_has_two_encoders(self):
        single = segnet.build_model(segnet.ModelConfig())
        dual = segnet.build_model(segnet.ModelConfig(streams=2))
        enc_params = sum(v.size for k, v in single.params.items() if k.startswith("enc"))
        dual_enc = sum(v.size for k, v in dual.params.items() if k.startswith("enc"))
        assert dual_enc == 2 * enc_params

    def test_seed_determinism(self):
        a = segnet.build_model(TINY)
        b = segnet.build_model(TINY)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_bad_config(self):
        with pytest.raises(BadConfig):
            segnet.ModelConfig(streams=3)
        with pytest.raises(BadConfig):
            segnet.ModelConfig(encoder_widths=(8, 16))
        with pytest.raises(BadConfig):
            segnet.ModelConfig(patch_size=100)


class TestForward:
    def test_zero_input_constant_map(self):
        model = segnet.build_model(TINY, dtype=np.float64)
        prob, _ = segnet.forward(model, np.zeros((1, 3, 16, 16)))
        assert np.allclose(prob, prob.ravel()[0], atol=1e-9)

    def test_infer_deterministic(self):
        model = segnet.build_model(TINY, dtype=np.float64)
        x = np.random.default_rng(1).uniform(size=(2, 3, 16, 16))
        a, _ = segnet.forward(model, x, mode="infer")
        b, _ = segnet.forward(model, x, mode="infer")
        np.testing.assert_array_equal(a, b)

    def test_shape_errors(self):
        model = segnet.build_model(TINY)
        with pytest.raises(ShapeMismatch):
            segnet.forward(model, np.zeros((1, 4, 16, 16)))
        with pytest.raises(ShapeMismatch):
            segnet.forward(model, np.zeros((1, 3, 12, 12)))

    def test_end_to_end_gradcheck(self):
        rng = np.random.default_rng(0)
        model = segnet.build_model(TINY, dtype=np.float64)
        x = rng.normal(size=(1, 3, 16, 16))
        t = (rng.random((1, 1, 16, 16)) > 0.5).astype(np.float64)

        def loss_fn():
            p, _ = segnet.forward(model, x, mode="infer")
            return nn.bce_loss(p, t)[0]

        p, tape = segnet.forward(model, x, mode="infer")
        _, g = nn.bce_loss(p, t)
        grads = segnet.backward(model, g, tape)
        names = list(model.params)
        err = nn.grad_check(loss_fn, [model.params[k] for k in names],
                            [grads[k] for k in names], n_samples=200,
                            rng=np.random.default_rng(5))
        assert err < 1e-3

    def test_dual_stream_zero_rgb_ok(self):
        model = segnet.build_model(TINY_DUAL, dtype=np.float64)
        x = np.random.default_rng(2).uniform(size=(1, 6, 16, 16))
        x[:, 3:] = 0.0
        prob, _ = segnet.forward(model, x)
        assert (prob > 0).all() and (prob < 1).all()


class TestTrain:
    def test_zero_epochs(self):
        rng = np.random.default_rng(3)
        model = segnet.build_model(TINY)
        data = tiny_dataset(rng, 4, size=16)
        out, hist = segnet.train(model, data, data, nn.Hyperparams(epochs=0))
        assert hist == []
        for k in model.params:
            np.testing.assert_array_equal(out.params[k], model.params[k])

    def test_empty_dataset(self):
        model = segnet.build_model(TINY)
        with pytest.raises(EmptyDataset):
            segnet.train(model, [], [], nn.Hyperparams(epochs=1))

    def test_loss_decreases_on_uniform_background(self):
        rng = np.random.default_rng(4)
        model = segnet.build_model(TINY, dtype=np.float64)
        data = [(rng.uniform(size=(3, 16, 16)), np.zeros((16, 16))) for _ in range(4)]
        _, hist = segnet.train(model, data, data, nn.Hyperparams(epochs=60),
                               seed=0, augment=False)
        assert hist[-1].val_loss < hist[0].val_loss
        assert hist[-1].train_loss < hist[0].train_loss

    def test_training_deterministic(self):
        rng = np.random.default_rng(5)
        data = tiny_dataset(rng, 6)
        runs = []
        for _ in range(2):
            model = segnet.build_model(TINY, dtype=np.float64)
            out, hist = segnet.train(model, data, data[:2],
                                     nn.Hyperparams(epochs=2), seed=9)
            runs.append((out, hist))
        (m1, h1), (m2, h2) = runs
        assert [(s.train_loss, s.val_loss, s.val_iou) for s in h1] == \
            [(s.train_loss, s.val_loss, s.val_iou) for s in h2]
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k], m2.params[k])

    def test_history_one_record_per_epoch(self):
        rng = np.random.default_rng(6)
        data = tiny_dataset(rng, 4)
        model = segnet.build_model(TINY)
        _, hist = segnet.train(model, data, data, nn.Hyperparams(epochs=3), seed=1)
        assert [s.epoch for s in hist] == [1, 2, 3]


class TestWeightsFile:
    def _model(self):
        model = segnet.build_model(TINY)
        model.norm_stats = [NormStats((0.0, 1.0, 2.0), (10.0, 20.0, 30.0))]
        return model

    def test_roundtrip_bitwise(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.alsw"
        segnet.save_weights(model, path)
        again = segnet.load_weights(path)
        assert again.config == model.config
        for k in model.params:
            np.testing.assert_array_equal(again.params[k], model.params[k])
        for k in model.bn_stats:
            np.testing.assert_array_equal(again.bn_stats[k], model.bn_stats[k])
        assert again.norm_stats == model.norm_stats

    def test_corrupt_byte(self, tmp_path):
        path = tmp_path / "m.alsw"
        segnet.save_weights(self._model(), path)
        data = bytearray(path.read_bytes())
        data[len(data) // 2] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumMismatch):
            segnet.load_weights(path)

    def test_version_mismatch(self, tmp_path):
        import struct
        path = tmp_path / "m.alsw"
        segnet.save_weights(self._model(), path)
        data = bytearray(path.read_bytes())
        struct.pack_into("<I", data, 4, 99)
        # keep CRC consistent so version is the first failure
        struct.pack_into("<I", data, len(data) - 4,
                         __import__("zlib").crc32(bytes(data[:-4])) & 0xFFFFFFFF)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch):
            segnet.load_weights(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.alsw"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(BadMagic):
            segnet.load_weights(path)


class TestSegmentRaster:
    def test_stride_equals_single_forward(self):
        model = segnet.build_model(segnet.ModelConfig(encoder_widths=(4, 4, 4),
                                                      bottleneck_width=8))
        x = np.random.default_rng(7).uniform(size=(3, 128, 128)).astype(np.float32)
        seg = segnet.segment_raster(model, x, stride=128)
        direct, _ = segnet.forward(model, x[None], mode="infer")
        np.testing.assert_allclose(seg.prob, direct[0, 0], atol=1e-7)

    def test_all_invalid_all_background(self):
        model = segnet.build_model(TINY)
        x = np.random.default_rng(8).uniform(size=(3, 16, 16)).astype(np.float32)
        seg = segnet.segment_raster(model, x, valid=np.zeros((16, 16), dtype=bool))
        assert not seg.binary.any()
        assert (seg.prob == 0).all()

    def test_binary_is_boolean(self):
        model = segnet.build_model(TINY)
        x = np.random.default_rng(9).uniform(size=(3, 32, 48)).astype(np.float32)
        seg = segnet.segment_raster(model, x)
        assert seg.binary.dtype == bool
        assert seg.prob.shape == (32, 48)
