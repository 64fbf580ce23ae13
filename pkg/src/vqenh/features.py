"""Frozen multi-tap feature pyramids.

The target frame is read at six taps of the backbone (the first
convolution before each of the five poolings, plus the fourth
convolution before the fifth pooling); reference frames at the three
deepest of those. Backbone parameters are never updated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import Frame
from .errors import ConfigError, ShapeError

__all__ = [
    "TARGET_TAPS",
    "REFERENCE_TAPS",
    "FeaturePyramid",
    "FeatureBackbone",
    "StubBackbone",
    "PretrainedBackbone",
    "build_backbone",
    "extract_target",
    "extract_reference",
    "backbone_checksum",
]

TARGET_TAPS = ((1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (5, 4))
REFERENCE_TAPS = ((3, 1), (4, 1), (5, 1))

# Stable fixture seed for the test-stub backbone; independent of the
# model seed so stub features behave like frozen pretrained weights.
_STUB_SEED = 74520

# torchvision vgg19().features indices of each tap, pre/post activation.
_VGG_TAP_INDEX_PRE = {(1, 1): 0, (2, 1): 5, (3, 1): 10, (4, 1): 19, (5, 1): 28, (5, 4): 34}
_VGG_TAP_INDEX_POST = {(1, 1): 1, (2, 1): 6, (3, 1): 11, (4, 1): 20, (5, 1): 29, (5, 4): 35}

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class FeaturePyramid:
    """Tap activations of one frame: map tap-id -> (channels, h, w) tensor."""

    taps: dict[tuple[int, int], torch.Tensor]
    source_frame_index: int = 0

    def __getitem__(self, tap: tuple[int, int]) -> torch.Tensor:
        return self.taps[tap]

    def __contains__(self, tap: tuple[int, int]) -> bool:
        return tap in self.taps


def _check_dims(h: int, w: int) -> None:
    if h % 16 != 0 or w % 16 != 0:
        raise ShapeError(
            f"frame dims must be multiples of 16 for five pooling levels, "
            f"got {h}x{w} (pad first)"
        )


class FeatureBackbone(nn.Module):
    """Base class: frozen module exposing ``channels`` per tap and a
    batched ``forward(x, taps)`` returning a dict of activations."""

    channels: dict[tuple[int, int], int]

    def freeze(self) -> "FeatureBackbone":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True):
        # stays in eval mode; the backbone is fixed during training
        return super().train(False)

    def forward(self, x: torch.Tensor, taps=TARGET_TAPS) -> dict:
        raise NotImplementedError


class StubBackbone(FeatureBackbone):
    """Deterministic stand-in with the same tap geometry as the pretrained
    backbone but small fixed-seed random convolutions.

    Convolutions use replicate padding so constant inputs map to constant
    taps; single-channel input is consumed directly.
    """

    LEVEL_WIDTHS = (8, 16, 32, 64, 64)
    LEVEL_CONVS = (1, 1, 1, 1, 4)  # 3x3 convolutions per pyramid level

    def __init__(self, post_activation: bool = True):
        super().__init__()
        self.post_activation = post_activation
        widths = self.LEVEL_WIDTHS
        self.channels = {(i, 1): widths[i - 1] for i in range(1, 6)}
        self.channels[(5, 4)] = widths[4]
        with torch.random.fork_rng():
            torch.manual_seed(_STUB_SEED)
            self.conv1 = nn.Conv2d(1, widths[0], 3, padding=1, padding_mode="replicate")
            self.conv2 = nn.Conv2d(widths[0], widths[1], 3, padding=1, padding_mode="replicate")
            self.conv3 = nn.Conv2d(widths[1], widths[2], 3, padding=1, padding_mode="replicate")
            self.conv4 = nn.Conv2d(widths[2], widths[3], 3, padding=1, padding_mode="replicate")
            self.block5 = nn.ModuleList(
                nn.Conv2d(widths[3 if k == 0 else 4], widths[4], 3,
                          padding=1, padding_mode="replicate")
                for k in range(4)
            )
        self.pool = nn.MaxPool2d(2)
        self.freeze()

    def _tap(self, conv_out: torch.Tensor) -> torch.Tensor:
        return torch.relu(conv_out) if self.post_activation else conv_out

    def forward(self, x: torch.Tensor, taps=TARGET_TAPS) -> dict:
        wanted = set(taps)
        out = {}
        convs = (self.conv1, self.conv2, self.conv3, self.conv4)
        for level, conv in enumerate(convs, start=1):
            x = conv(x)
            tapped = self._tap(x)
            if (level, 1) in wanted:
                out[(level, 1)] = tapped
            x = self.pool(torch.relu(x))
        for k, conv in enumerate(self.block5, start=1):
            x = conv(x)
            tapped = self._tap(x)
            if (5, k) in wanted:
                out[(5, k)] = tapped
            x = torch.relu(x)
        return out


class PretrainedBackbone(FeatureBackbone):
    """The 19-layer pretrained classification backbone.

    Weights are loaded from a local state-dict file (``weights_path``);
    the expected file is the stock torchvision checkpoint
    ``vgg19-dcbb9e9d.pth`` (the hex infix is the checksum prefix of its
    SHA-256). Single-channel luma is replicated to three channels and
    normalized with the standard ImageNet statistics.
    """

    LEVEL_WIDTHS = (64, 128, 256, 512, 512)
    LEVEL_CONVS = (2, 2, 4, 4, 4)  # convolutions traversed per level up to each tap

    def __init__(self, weights_path: str | None = None, post_activation: bool = True):
        super().__init__()
        import torchvision.models as tvm

        self.post_activation = post_activation
        net = tvm.vgg19(weights=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        else:
            raise ConfigError(
                "pretrained backbone requires backbone_weights (path to the "
                "vgg19 checkpoint); use backbone='test-stub' for a hermetic run"
            )
        index = _VGG_TAP_INDEX_POST if post_activation else _VGG_TAP_INDEX_PRE
        last = max(index.values())
        self.layers = nn.ModuleList(net.features[: last + 1])
        self.tap_index = index
        self.channels = {(i, 1): self.LEVEL_WIDTHS[i - 1] for i in range(1, 6)}
        self.channels[(5, 4)] = self.LEVEL_WIDTHS[4]
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("mean", mean)
        self.register_buffer("std", std)
        self.freeze()

    def forward(self, x: torch.Tensor, taps=TARGET_TAPS) -> dict:
        wanted = {self.tap_index[t]: t for t in taps}
        x = (x.repeat(1, 3, 1, 1) - self.mean) / self.std
        out = {}
        last = max(wanted)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in wanted:
                out[wanted[i]] = x
            if i == last:
                break
        return out


def build_backbone(kind: str, weights_path: str | None = None,
                   post_activation: bool = True) -> FeatureBackbone:
    if kind == "test-stub":
        return StubBackbone(post_activation=post_activation)
    if kind == "pretrained":
        return PretrainedBackbone(weights_path, post_activation=post_activation)
    raise ConfigError(f"unknown backbone kind {kind!r}")


def _frame_to_tensor(frame: Frame) -> torch.Tensor:
    return torch.from_numpy(frame.data.copy()).unsqueeze(0).unsqueeze(0)


def extract_target(frame: Frame, backbone: FeatureBackbone) -> FeaturePyramid:
    """All six target-frame taps."""
    _check_dims(frame.height, frame.width)
    with torch.no_grad():
        taps = backbone(_frame_to_tensor(frame), TARGET_TAPS)
    return FeaturePyramid(
        taps={t: v.squeeze(0) for t, v in taps.items()},
        source_frame_index=frame.index,
    )


def extract_reference(frame: Frame, backbone: FeatureBackbone) -> FeaturePyramid:
    """The three reference-frame taps (levels 3, 4, 5)."""
    _check_dims(frame.height, frame.width)
    with torch.no_grad():
        taps = backbone(_frame_to_tensor(frame), REFERENCE_TAPS)
    return FeaturePyramid(
        taps={t: v.squeeze(0) for t, v in taps.items()},
        source_frame_index=frame.index,
    )


def backbone_checksum(backbone: FeatureBackbone) -> str:
    """SHA-256 over all parameters; constant across training proves frozen-ness."""
    digest = hashlib.sha256()
    for name, p in sorted(backbone.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.numpy().tobytes())
    return digest.hexdigest()
