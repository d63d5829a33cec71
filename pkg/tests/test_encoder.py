"""Tests for the 3D ResNet encoder, projection head and classifiers."""

import math

import numpy as np
import pytest
import torch

from rppg_ssl.encoder import (
    EncoderConfig,
    EncoderShapeError,
    PretrainModel,
    VideoEncoder,
    expected_stage_shapes,
    load_checkpoint,
    model_from_checkpoint,
    parameter_digest,
    save_checkpoint,
)


class TestEncoderConfig:
    def test_full_and_tiny_presets(self):
        full = EncoderConfig.full()
        assert full.stage_channels == (64, 64, 128, 256, 512)
        assert full.feature_dim == 512
        assert full.projection_dim == 2048
        tiny = EncoderConfig.tiny()
        assert tiny.stage_channels == (16, 16, 32, 64, 64)
        assert tiny.feature_dim == 64

    def test_feature_dim_must_match_last_stage(self):
        with pytest.raises(ValueError):
            EncoderConfig("full", (64, 64, 128, 256, 512), 2, 256, 2048, 7, 5)

    def test_blocks_per_stage_fixed(self):
        with pytest.raises(ValueError):
            EncoderConfig("full", (64, 64, 128, 256, 512), 3, 512, 2048, 7, 5)


class TestStageShapes:
    def test_full_variant_reference_shapes(self):
        encoder = VideoEncoder(EncoderConfig.full())
        _, shapes = encoder.forward_with_shapes(torch.randn(1, 3, 30, 64, 64))
        assert shapes["conv1"] == (64, 30, 32, 32)
        assert shapes["maxpool"] == (64, 15, 16, 16)
        assert shapes["conv2"] == (64, 15, 16, 16)
        assert shapes["conv3"] == (128, 8, 8, 8)
        assert shapes["conv4"] == (256, 4, 4, 4)
        assert shapes["conv5"] == (512, 2, 2, 2)
        assert shapes["pooled"] == (512,)

    def test_analytic_shapes_match_forward(self):
        config = EncoderConfig.tiny()
        encoder = VideoEncoder(config)
        encoder.eval()
        for input_shape in [(3, 16, 32, 32), (3, 30, 64, 64), (3, 8, 16, 16)]:
            _, shapes = encoder.forward_with_shapes(torch.randn(1, *input_shape))
            analytic = expected_stage_shapes(config, input_shape)
            for name, expected in analytic.items():
                assert shapes[name] == expected, name

    def test_tiny_pooled_dimension(self):
        encoder = VideoEncoder(EncoderConfig.tiny())
        h = encoder(torch.randn(2, 3, 16, 32, 32))
        assert h.shape == (2, 64)

    def test_rejects_wrong_channel_count(self):
        encoder = VideoEncoder(EncoderConfig.tiny())
        with pytest.raises(EncoderShapeError, match="conv1"):
            encoder(torch.randn(1, 4, 16, 32, 32))

    def test_rejects_wrong_rank(self):
        encoder = VideoEncoder(EncoderConfig.tiny())
        with pytest.raises(EncoderShapeError):
            encoder(torch.randn(3, 16, 32, 32))


class TestForwardSemantics:
    def test_zero_input_gives_zero_features_in_eval_mode(self):
        # Zero conv biases, unit BN scale, zero BN shift and unit running
        # variance: the all-zero input stays exactly zero through every
        # stage, and ReLU(0) = 0.
        encoder = VideoEncoder(EncoderConfig.tiny())
        encoder.eval()
        h = encoder(torch.zeros(1, 3, 16, 32, 32))
        assert torch.all(h == 0)

    def test_deterministic_init_under_seed(self):
        torch.manual_seed(3)
        a = PretrainModel(EncoderConfig.tiny())
        torch.manual_seed(3)
        b = PretrainModel(EncoderConfig.tiny())
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_classifier_biases_zero_initialised(self):
        model = PretrainModel(EncoderConfig.tiny())
        assert torch.all(model.roi_head.bias == 0)
        assert torch.all(model.stride_head.bias == 0)


class TestProjectionHead:
    def test_unit_norm_output(self):
        model = PretrainModel(EncoderConfig.tiny(projection_dim=64))
        model.eval()
        h = torch.randn(8, 64)
        z = model.projection(h)
        np.testing.assert_allclose(
            z.norm(dim=1).detach().numpy(), 1.0, atol=1e-6
        )

    def test_not_scale_invariant(self):
        model = PretrainModel(EncoderConfig.tiny(projection_dim=64))
        model.eval()
        h = torch.randn(4, 64)
        z1 = model.projection(h)
        z2 = model.projection(2.0 * h)
        assert not torch.allclose(z1, z2)

    def test_default_projection_width(self):
        model = PretrainModel(EncoderConfig.full())
        model.eval()
        z = model.projection(torch.randn(2, 512))
        assert z.shape == (2, 2048)


class TestClassifiers:
    def test_logit_widths(self):
        model = PretrainModel(EncoderConfig.tiny())
        h = torch.randn(3, 64)
        assert model.roi_head(h).shape == (3, 7)
        assert model.stride_head(h).shape == (3, 5)

    def test_zeroed_classifier_gives_uniform_softmax(self):
        model = PretrainModel(EncoderConfig.tiny())
        torch.nn.init.zeros_(model.roi_head.weight)
        h = torch.randn(5, 64)
        logits = model.roi_head(h)
        loss = torch.nn.functional.cross_entropy(logits, torch.zeros(5, dtype=torch.long))
        assert float(loss) == pytest.approx(math.log(7.0), abs=1e-6)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        torch.manual_seed(0)
        model = PretrainModel(EncoderConfig.tiny(projection_dim=32))
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(
            path, model, optimizer, {"steps": 10}, {"lr": 1e-3, "seed": 0}
        )
        payload = load_checkpoint(path)
        assert payload["train_meta"]["steps"] == 10
        assert isinstance(payload["config_hash"], str) and len(payload["config_hash"]) == 64
        restored = model_from_checkpoint(payload)
        assert parameter_digest(restored) == parameter_digest(model)
        assert restored.config == model.config

    def test_rejects_unknown_format_version(self, tmp_path):
        torch.manual_seed(0)
        model = PretrainModel(EncoderConfig.tiny(projection_dim=32))
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, None, {}, {})
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(path)

    def test_digest_changes_with_parameters(self):
        torch.manual_seed(0)
        model = PretrainModel(EncoderConfig.tiny(projection_dim=32))
        before = parameter_digest(model)
        with torch.no_grad():
            model.roi_head.weight.add_(1.0)
        assert parameter_digest(model) != before
