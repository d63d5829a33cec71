"""3D ResNet-18 video encoder, projection head and pseudo-label classifiers.

The full variant follows the standard 3D ResNet-18 layout on 3x30x64x64
inputs: a 7x7x7 stem with temporal stride 1 / spatial stride 2, a 3x3x3
max pool with stride 2, then four stages of two basic blocks each, with
spatiotemporal stride-2 downsampling in the last three stages, ending in
global average pooling. Every convolution is followed by batch
normalisation and a ReLU.

A reduced ``tiny`` variant (same topology, narrower channels) exists for
CPU-scale experiments and tests. The projection head is a 2-layer MLP
whose L2-normalised output feeds the contrastive loss; it is discarded at
evaluation time, when the pooled feature vector h is used directly.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT_VERSION = 1

FULL_CHANNELS = (64, 64, 128, 256, 512)
TINY_CHANNELS = (16, 16, 32, 64, 64)

STAGE_NAMES = ("conv1", "maxpool", "conv2", "conv3", "conv4", "conv5")


class EncoderShapeError(ValueError):
    """Input shape incompatible with the encoder; names the failing stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "full"
    stage_channels: tuple[int, ...] = FULL_CHANNELS
    blocks_per_stage: int = 2
    feature_dim: int = 512
    projection_dim: int = 2048
    n_rois: int = 7
    n_strides: int = 5

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        if len(self.stage_channels) != 5:
            raise ValueError("stage_channels must list conv1..conv5 widths")
        if self.blocks_per_stage != 2:
            raise ValueError("the ResNet-18 layout uses 2 basic blocks per stage")
        if self.feature_dim != self.stage_channels[-1]:
            raise ValueError("feature_dim must equal the last stage width")
        if min(self.projection_dim, self.n_rois, self.n_strides) < 1:
            raise ValueError("projection_dim, n_rois and n_strides must be >= 1")

    @classmethod
    def full(cls, projection_dim: int = 2048, n_rois: int = 7, n_strides: int = 5):
        return cls("full", FULL_CHANNELS, 2, 512, projection_dim, n_rois, n_strides)

    @classmethod
    def tiny(cls, projection_dim: int = 128, n_rois: int = 7, n_strides: int = 5):
        return cls("tiny", TINY_CHANNELS, 2, 64, projection_dim, n_rois, n_strides)


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def expected_stage_shapes(
    config: EncoderConfig, input_shape: tuple[int, int, int, int]
) -> dict[str, tuple[int, int, int, int]]:
    """Analytic (C, D, H, W) output shape per stage for a given input."""
    c, d, h, w = input_shape
    if c != 3:
        raise EncoderShapeError("conv1", f"expected 3 input channels, got {c}")
    shapes: dict[str, tuple[int, int, int, int]] = {}
    d1, h1, w1 = d, _conv_out(h, 7, 2, 3), _conv_out(w, 7, 2, 3)
    shapes["conv1"] = (config.stage_channels[0], d1, h1, w1)
    d2, h2, w2 = (_conv_out(x, 3, 2, 1) for x in (d1, h1, w1))
    shapes["maxpool"] = (config.stage_channels[0], d2, h2, w2)
    dims = (d2, h2, w2)
    for i, name in enumerate(("conv2", "conv3", "conv4", "conv5")):
        if name != "conv2":
            dims = tuple(_conv_out(x, 3, 2, 1) for x in dims)
        shapes[name] = (config.stage_channels[i + 1], *dims)
    for name, shape in shapes.items():
        if min(shape[1:]) < 1:
            raise EncoderShapeError(
                name, f"input {input_shape} collapses to {shape} here"
            )
    return shapes


class BasicBlock3d(nn.Module):
    """Two 3x3x3 convolutions with an identity or projected shortcut."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv3d(
            in_channels, out_channels, 3, stride=stride, padding=1, bias=False
        )
        self.bn1 = nn.BatchNorm3d(out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv3d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm3d(out_channels),
            )
        else:
            self.shortcut = None

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        residual = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + residual)


class VideoEncoder(nn.Module):
    """Maps a (B, 3, D, H, W) clip batch to pooled features (B, feature_dim)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c1, c2, c3, c4, c5 = config.stage_channels
        self.conv1 = nn.Sequential(
            nn.Conv3d(3, c1, 7, stride=(1, 2, 2), padding=3, bias=False),
            nn.BatchNorm3d(c1),
            nn.ReLU(inplace=True),
        )
        self.maxpool = nn.MaxPool3d(3, stride=2, padding=1)
        self.conv2 = nn.Sequential(BasicBlock3d(c1, c2), BasicBlock3d(c2, c2))
        self.conv3 = nn.Sequential(BasicBlock3d(c2, c3, 2), BasicBlock3d(c3, c3))
        self.conv4 = nn.Sequential(BasicBlock3d(c3, c4, 2), BasicBlock3d(c4, c4))
        self.conv5 = nn.Sequential(BasicBlock3d(c4, c5, 2), BasicBlock3d(c5, c5))
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.apply(_init_weights)

    def _check_input(self, x: torch.Tensor):
        if x.dim() != 5:
            raise EncoderShapeError("conv1", f"expected a 5-D batch, got {tuple(x.shape)}")
        expected_stage_shapes(self.config, tuple(x.shape[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = self.forward_with_shapes(x)
        return h

    def forward_with_shapes(
        self, x: torch.Tensor
    ) -> tuple[torch.Tensor, dict[str, tuple[int, ...]]]:
        self._check_input(x)
        shapes = {}
        out = x
        for name in STAGE_NAMES:
            out = getattr(self, name)(out)
            shapes[name] = tuple(out.shape[1:])
        out = self.pool(out).flatten(1)
        shapes["pooled"] = tuple(out.shape[1:])
        return out, shapes


class ProjectionHead(nn.Module):
    """2-layer MLP onto the unit sphere; used only during pretraining.

    The hidden batch norm centres the pooled features, which otherwise
    share a large positive offset that leaves every projected vector
    nearly parallel at initialisation (a collapse plateau for the
    contrastive loss).
    """

    def __init__(self, feature_dim: int, projection_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(feature_dim, feature_dim)
        self.bn = nn.BatchNorm1d(feature_dim)
        self.fc2 = nn.Linear(feature_dim, projection_dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        z = self.fc2(F.relu(self.bn(self.fc1(h))))
        return F.normalize(z, dim=-1)


class PretrainModel(nn.Module):
    """Encoder + projection head + the two single-layer classifiers."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.encoder = VideoEncoder(config)
        self.projection = ProjectionHead(config.feature_dim, config.projection_dim)
        self.roi_head = nn.Linear(config.feature_dim, config.n_rois)
        self.stride_head = nn.Linear(config.feature_dim, config.n_strides)
        nn.init.zeros_(self.roi_head.bias)
        nn.init.zeros_(self.stride_head.bias)

    def forward(self, x: torch.Tensor):
        h = self.encoder(x)
        return h, self.projection(h), self.roi_head(h), self.stride_head(h)


def _init_weights(module: nn.Module):
    if isinstance(module, nn.Conv3d):
        nn.init.kaiming_uniform_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm3d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()


def parameter_digest(module: nn.Module) -> str:
    """Stable digest of all parameters and buffers (for no-update audits)."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for key in sorted(state):
        digest.update(key.encode())
        digest.update(state[key].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(
    path: str | Path,
    model: PretrainModel,
    optimizer: torch.optim.Optimizer | None,
    train_meta: dict,
    resolved_config: dict,
):
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder_config": asdict(model.config),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": np.random.get_state(),
        "config_hash": config_hash(resolved_config),
        "train_meta": dict(train_meta),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    path.write_bytes(buffer.getvalue())


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format {version!r} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return payload


def model_from_checkpoint(payload: dict) -> PretrainModel:
    config = EncoderConfig(**payload["encoder_config"])
    model = PretrainModel(config)
    model.load_state_dict(payload["model_state"])
    return model
