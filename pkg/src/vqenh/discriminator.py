"""Convolution-only patch discriminator.

Maps an image to a spatial array of patch realness scores; image
realness is the mean score. The default stack (three stride-2
convolutions, one stride-1, then a 1-channel projection, all 4x4) has
a 70x70 receptive field. Feature normalization is instance-style with
tracked statistics, so evaluation-mode scoring is strictly local.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import Frame
from .errors import ShapeError

__all__ = ["PatchDiscriminator", "discriminate", "realness"]

_LRELU_SLOPE = 0.2


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int = 1,
                 widths: tuple[int, ...] = (64, 128, 256, 512),
                 strides: tuple[int, ...] = (2, 2, 2, 1),
                 kernel: int = 4,
                 norm: str = "instance"):
        super().__init__()
        if len(widths) != len(strides):
            raise ShapeError("widths and strides must pair up")
        pad = (kernel - 1) // 2
        self.layer_geometry = []  # (kernel, stride, padding) incl. final projection
        blocks = []
        prev = in_channels
        for i, (w, s) in enumerate(zip(widths, strides)):
            layers = [nn.Conv2d(prev, w, kernel, stride=s, padding=pad)]
            if norm == "instance" and i > 0:
                layers.append(nn.InstanceNorm2d(w, affine=True, track_running_stats=True))
            layers.append(nn.LeakyReLU(_LRELU_SLOPE))
            blocks.append(nn.Sequential(*layers))
            self.layer_geometry.append((kernel, s, pad))
            prev = w
        self.blocks = nn.ModuleList(blocks)
        self.project = nn.Conv2d(prev, 1, kernel, stride=1, padding=pad)
        self.layer_geometry.append((kernel, 1, pad))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Raw patch scores (b, 1, h_d, w_d); no final activation."""
        return self.forward_features(x)[0]

    def forward_features(self, x: torch.Tensor):
        """Scores plus the intermediate activation of every block before
        the final projection (the feature-matching layer set)."""
        if x.dim() == 3:
            x = x.unsqueeze(0)
        rf = self.receptive_field()
        if x.shape[-2] < rf or x.shape[-1] < rf:
            raise ShapeError(
                f"input {tuple(x.shape[-2:])} is smaller than the {rf}x{rf} receptive field"
            )
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return self.project(x), feats

    def receptive_field(self) -> int:
        """Side length of the input patch one output element sees."""
        r, j = 1, 1
        for k, s, _ in self.layer_geometry:
            r = r + (k - 1) * j
            j = j * s
        return r

    def total_stride(self) -> int:
        j = 1
        for _, s, _ in self.layer_geometry:
            j *= s
        return j

    def input_window(self, pos: int) -> tuple[int, int]:
        """Closed input index range [lo, hi] feeding output position ``pos``
        along one spatial axis (may extend past the borders into padding)."""
        lo = hi = pos
        for k, s, p in reversed(self.layer_geometry):
            lo = lo * s - p
            hi = hi * s - p + (k - 1)
        return lo, hi


def _frame_tensor(image: Frame | torch.Tensor) -> torch.Tensor:
    if isinstance(image, Frame):
        return torch.from_numpy(image.data.copy()).reshape(1, 1, *image.data.shape)
    return image if image.dim() == 4 else image.unsqueeze(0)


def discriminate(image: Frame | torch.Tensor, disc: PatchDiscriminator) -> torch.Tensor:
    """Patch score map for one image."""
    with torch.no_grad():
        return disc(_frame_tensor(image)).squeeze(0).squeeze(0)


def realness(image: Frame | torch.Tensor, disc: PatchDiscriminator) -> float:
    """Mean of the patch score map."""
    return float(discriminate(image, disc).mean())
