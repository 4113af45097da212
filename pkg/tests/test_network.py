"""Model architecture contracts: tap shapes, channel widths, frozen encoder,
the K-model identity point, weight-file round trips."""

import numpy as np
import pytest

from hazelab.errors import FormatError, ShapeError
from hazelab.network import (
    BaselineModel,
    EncoderConfig,
    Model,
    ModelConfig,
    ModelWeights,
    declared_shapes,
    init_weights,
    load_weights,
    save_weights,
    semantic_encode,
)
from hazelab.ops import mse_loss
from hazelab.optim import adam_step
from hazelab.tensor import Tensor


def tiny_config(**kw):
    return ModelConfig(EncoderConfig.preset("tiny"), **kw)


def rand_image(shape, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(np.float32)


class TestEncoderTaps:
    def test_vgg16_tap_shapes_at_256(self):
        cfg = ModelConfig(EncoderConfig.preset("vgg16"))
        model = Model(cfg, init_weights(cfg, 0))
        x = Tensor(np.zeros((1, 3, 256, 256), np.float32))
        tap4, tap5 = semantic_encode(x, cfg, model.tensors)
        assert tap4.shape == (1, 512, 32, 32)
        assert tap5.shape == (1, 512, 8, 8)

    def test_tiny_tap_shapes_at_256(self):
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        x = Tensor(np.zeros((1, 3, 256, 256), np.float32))
        tap4, tap5 = semantic_encode(x, cfg, model.tensors)
        assert tap4.shape == (1, 32, 32, 32)
        assert tap5.shape == (1, 32, 8, 8)

    def test_indivisible_size_rejected(self):
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        with pytest.raises(ShapeError):
            semantic_encode(Tensor(np.zeros((1, 3, 48, 48), np.float32)), cfg, model.tensors)

    def test_frozen_encoder_unchanged_by_training_step(self):
        cfg = ModelConfig(EncoderConfig.preset("vgg16"))  # frozen by default
        model = Model(cfg, init_weights(cfg, 0))
        before = {
            name: t.data.copy() for name, t in model.tensors.items()
            if isinstance(t, Tensor) and name.startswith("encoder.")
        }
        x = Tensor(rand_image((1, 3, 64, 64)))
        trace = model.forward(x)
        mse_loss(trace.prediction, Tensor(np.zeros_like(trace.prediction.data))).backward()
        adam_step(model.params, lr=1e-2)
        for name, arr in before.items():
            assert np.array_equal(model.tensors[name].data, arr), name
        assert not any(n.startswith("encoder.") for n in model.params.names())

    def test_trainable_encoder_does_change(self):
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        name = "encoder.block1.conv1.w"
        before = model.tensors[name].data.copy()
        trace = model.forward(Tensor(rand_image((1, 3, 64, 64))))
        mse_loss(trace.prediction, Tensor(np.zeros_like(trace.prediction.data))).backward()
        adam_step(model.params, lr=1e-2)
        assert not np.array_equal(model.tensors[name].data, before)


class TestModuleWidths:
    def test_upsample_widths_vgg(self):
        shapes = declared_shapes(ModelConfig(EncoderConfig.preset("vgg16")))
        assert shapes["upsample.stage1.w"] == (256, 512, 3, 3)
        assert shapes["upsample.stage2.w"] == (128, 256, 3, 3)
        assert shapes["upsample.stage3.w"] == (16, 128, 3, 3)

    def test_upsample_widths_tiny(self):
        shapes = declared_shapes(tiny_config())
        assert shapes["upsample.stage1.w"] == (16, 32, 3, 3)
        assert shapes["upsample.stage2.w"] == (8, 16, 3, 3)
        assert shapes["upsample.stage3.w"] == (16, 8, 3, 3)

    def test_global_module_widths(self):
        vgg = declared_shapes(ModelConfig(EncoderConfig.preset("vgg16")))
        assert vgg["global.conv1.w"] == (256, 512, 5, 5)
        assert vgg["global.conv2.w"] == (64, 256, 5, 5)
        assert vgg["global.conv3.w"] == (33, 64, 1, 1)
        tiny = declared_shapes(tiny_config())
        assert tiny["global.conv1.w"] == (32, 32, 5, 5)
        assert tiny["global.conv2.w"] == (16, 32, 5, 5)
        assert tiny["global.conv3.w"] == (33, 16, 1, 1)

    def test_color_module_51_channel_input(self):
        shapes = declared_shapes(tiny_config())
        assert shapes["color.conv1.w"] == (16, 51, 1, 1)
        assert shapes["color.conv2.w"] == (16, 16, 3, 3)
        assert shapes["color.conv3.w"] == (8, 32, 5, 5)
        assert shapes["color.conv4.w"] == (4, 24, 7, 7)
        assert shapes["color.conv5.w"] == (3, 44, 3, 3)

    def test_baseline_widths(self):
        shapes = declared_shapes(tiny_config(kind="baseline"))
        assert shapes["color.conv1.w"] == (24, 6, 1, 1)
        assert shapes["color.conv3.w"] == (8, 40, 5, 5)
        assert not any(name.startswith("encoder.") for name in shapes)


class TestFullForward:
    def test_shapes_and_confidence(self):
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        trace = model.forward(Tensor(rand_image((2, 3, 64, 64))))
        assert trace.prediction.shape == (2, 3, 64, 64)
        assert trace.semantic.shape == (2, 16, 64, 64)
        assert trace.global_features.shape == (2, 32, 1, 1)
        assert trace.confidence.shape == (2, 1, 2, 2)
        sums = trace.confidence.data.sum(axis=(1, 2, 3))
        assert np.abs(sums - 1.0).max() < 1e-6

    def test_deterministic_forward(self):
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 3))
        x = Tensor(rand_image((1, 3, 64, 64), 5))
        a = model.forward(x).prediction.data
        b = model.forward(x).prediction.data
        assert np.array_equal(a, b)

    def test_pooled_features_within_local_bounds(self):
        from hazelab.network import global_estimate

        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 1))
        tap5 = Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 32, 8, 8)).astype(np.float32))
        pooled, confidence = global_estimate(tap5, model.tensors)
        # recompute the 33-channel map to get local features
        from hazelab import ops

        x = ops.relu(ops.conv2d(tap5, model.tensors["global.conv1.w"], model.tensors["global.conv1.b"]))
        x = ops.relu(ops.conv2d(x, model.tensors["global.conv2.w"], model.tensors["global.conv2.b"]))
        x = ops.conv2d(x, model.tensors["global.conv3.w"], model.tensors["global.conv3.b"])
        local = x.data[:, :32]
        lo = local.min(axis=(2, 3)) - 1e-5
        hi = local.max(axis=(2, 3)) + 1e-5
        got = pooled.data[:, :, 0, 0]
        assert np.all(got >= lo) and np.all(got <= hi)

    def test_constant_block5_confidence_uniform_in_interior(self):
        """A constant input is translation symmetric; zero `same` padding
        breaks that only near borders.  Confidence must be exactly uniform
        across positions whose stacked 5x5 receptive fields avoid padding."""
        from hazelab.network import global_estimate

        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 1))
        tap5 = Tensor(np.full((1, 32, 12, 12), 0.37, np.float32))
        _pooled, confidence = global_estimate(tap5, model.tensors)
        conf = confidence.data[0, 0]
        interior = conf[4:-4, 4:-4]
        assert np.abs(interior - interior[0, 0]).max() < 1e-7

    def test_gradient_reaches_every_trainable_tensor(self):
        """Backward reachability: every trainable tensor accumulates gradient."""
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        x = Tensor(rand_image((1, 3, 256, 256), 9))
        trace = model.forward(x)
        mse_loss(trace.prediction, Tensor(np.zeros_like(trace.prediction.data))).backward()
        reached = 0
        nonzero_elems = 0
        total_elems = 0
        for name, p in model.params.items():
            g = p.value.grad
            assert g is not None, f"no gradient reached {name}"
            reached += bool(np.any(g != 0))
            nonzero_elems += int((g != 0).sum())
            total_elems += g.size
        assert reached == len(model.params)  # 100% of parameter tensors
        assert nonzero_elems / total_elems > 0.5  # ReLU zeros are expected, not dominant

    def test_kmodel_identity_when_k_forced_to_one(self):
        cfg = tiny_config()
        weights = init_weights(cfg, 0)
        weights.tensors["color.conv5.w"][:] = 0.0
        weights.tensors["color.conv5.b"][:] = 1.0
        model = Model(cfg, weights)
        img = rand_image((1, 3, 64, 64), 11)
        trace = model.forward(Tensor(img))
        assert np.array_equal(trace.prediction.data, img)

    def test_direct_head_differs_from_kmodel(self):
        w = init_weights(tiny_config(), 0)
        a = Model(tiny_config(), w).forward(Tensor(rand_image((1, 3, 64, 64)))).prediction.data
        wd = init_weights(tiny_config(head="direct"), 0)
        b = Model(tiny_config(head="direct"), wd).forward(
            Tensor(rand_image((1, 3, 64, 64)))
        ).prediction.data
        assert not np.array_equal(a, b)

    def test_translation_covariance_of_local_features(self):
        """Shifting the input window by 32px shifts block-4 features by 4 cells
        (1/8 resolution), up to border effects outside the receptive field."""
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        canvas = rand_image((160, 160, 3), 13)
        a = canvas[0:128, 0:128]
        b = canvas[0:128, 32:160]
        tap4_a, _ = semantic_encode(Tensor(a.transpose(2, 0, 1)[None]), cfg, model.tensors)
        tap4_b, _ = semantic_encode(Tensor(b.transpose(2, 0, 1)[None]), cfg, model.tensors)
        shift = 32 // 8
        margin = 5  # receptive-field half-width at 1/8 resolution, rounded up
        inner_a = tap4_a.data[:, :, margin:-margin, margin + shift : 16 - margin]
        inner_b = tap4_b.data[:, :, margin:-margin, margin : 16 - margin - shift]
        assert inner_a.shape == inner_b.shape and inner_a.size > 0
        assert np.abs(inner_a - inner_b).max() < 1e-4


class TestBaseline:
    def test_six_channel_input_and_output_shape(self):
        cfg = tiny_config(kind="baseline")
        model = BaselineModel(cfg, init_weights(cfg, 0))
        img = rand_image((2, 3, 64, 64))
        out = model.forward(Tensor(img), np.array([[0.8, 0.7, 0.6], [0.5, 0.5, 0.5]]))
        assert out.shape == (2, 3, 64, 64)

    def test_kmodel_identity_holds_for_baseline_too(self):
        cfg = tiny_config(kind="baseline")
        weights = init_weights(cfg, 0)
        weights.tensors["color.conv5.w"][:] = 0.0
        weights.tensors["color.conv5.b"][:] = 1.0
        model = BaselineModel(cfg, weights)
        img = rand_image((1, 3, 32, 32), 4)  # baseline has no /32 constraint
        out = model.forward(Tensor(img), np.array([[0.9, 0.9, 0.9]]))
        assert np.array_equal(out.data, img)


class TestWeightsIO:
    def test_save_load_round_trip_bit_exact(self, tmp_path):
        cfg = tiny_config()
        weights = init_weights(cfg, 0)
        path = tmp_path / "w.hzw"
        save_weights(weights, path)
        back = load_weights(path, cfg)
        assert set(back.tensors) == set(weights.tensors)
        for name in weights.tensors:
            assert np.array_equal(back.tensors[name], weights.tensors[name]), name

    def test_normalization_header_round_trip(self, tmp_path):
        cfg = tiny_config()
        weights = init_weights(cfg, 0)
        weights.normalization = (
            np.array([0.485, 0.456, 0.406], np.float32),
            np.array([0.229, 0.224, 0.225], np.float32),
        )
        path = tmp_path / "w.hzw"
        save_weights(weights, path)
        back = load_weights(path, cfg)
        assert np.allclose(back.normalization[0], weights.normalization[0])
        assert np.allclose(back.normalization[1], weights.normalization[1])

    def test_renamed_tensor_error_names_it(self, tmp_path):
        cfg = tiny_config()
        weights = init_weights(cfg, 0)
        weights.tensors["definitely.not.a.layer"] = weights.tensors.pop("color.conv1.w")
        path = tmp_path / "w.hzw"
        save_weights(weights, path)
        with pytest.raises(FormatError) as err:
            load_weights(path, cfg)
        msg = str(err.value)
        assert "color.conv1.w" in msg or "definitely.not.a.layer" in msg

    def test_preset_mismatch_is_shape_error(self, tmp_path):
        tiny = tiny_config()
        path = tmp_path / "w.hzw"
        save_weights(init_weights(tiny, 0), path)
        vgg = ModelConfig(EncoderConfig.preset("vgg16"))
        with pytest.raises(FormatError):
            load_weights(path, vgg)

    def test_normalization_applies_to_encoder_path_only(self):
        """The color module must still see the raw hazy image: with K forced
        to 1 the output equals the input regardless of normalization."""
        cfg = tiny_config()
        weights = init_weights(cfg, 0)
        weights.tensors["color.conv5.w"][:] = 0.0
        weights.tensors["color.conv5.b"][:] = 1.0
        weights.normalization = (
            np.array([0.5, 0.5, 0.5], np.float32),
            np.array([0.25, 0.25, 0.25], np.float32),
        )
        model = Model(cfg, weights)
        img = rand_image((1, 3, 64, 64), 21)
        trace = model.forward(Tensor(img))
        assert np.array_equal(trace.prediction.data, img)

    def test_export_weights_snapshots_current_values(self):
        cfg = tiny_config()
        model = Model(cfg, init_weights(cfg, 0))
        trace = model.forward(Tensor(rand_image((1, 3, 64, 64))))
        mse_loss(trace.prediction, Tensor(np.zeros_like(trace.prediction.data))).backward()
        adam_step(model.params)
        exported = model.export_weights()
        assert np.array_equal(exported.tensors["color.conv1.w"],
                              model.tensors["color.conv1.w"].data)


class TestInitDeterminism:
    def test_same_seed_same_weights(self):
        a = init_weights(tiny_config(), 7)
        b = init_weights(tiny_config(), 7)
        assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)

    def test_he_scale_and_zero_bias(self):
        weights = init_weights(ModelConfig(EncoderConfig.preset("vgg16")), 0)
        w = weights.tensors["encoder.block3.conv1.w"]
        fan_in = w.shape[1] * 9
        assert w.std() == pytest.approx(np.sqrt(2 / fan_in), rel=0.1)
        assert np.all(weights.tensors["encoder.block3.conv1.b"] == 0)
