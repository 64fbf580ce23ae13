"""Two-branch progressive decoder.

Each branch starts from the deepest target tap (with the level-5
attention output added), then repeatedly applies a 3x3 convolution,
doubles the resolution with bilinear upsampling, and concatenates the
matching skip tap (with that level's attention output added) until the
input resolution is reached. Upsampling is bilinear throughout; strided
deconvolution is deliberately absent.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import AblationMask
from .errors import ConfigError, ShapeError

__all__ = ["DecoderBranch", "merge_branches", "default_decoder_widths"]

_LRELU_SLOPE = 0.2


def default_decoder_widths(channels: dict) -> tuple[int, ...]:
    """Convolution output widths for levels 5..1, defaulting to the
    backbone tap widths at each level."""
    return tuple(channels[(i, 1)] for i in range(5, 0, -1))


class DecoderBranch(nn.Module):
    """One progressive decoding branch.

    ``attention_levels`` names the pyramid levels (subset of {3, 4, 5})
    whose attention outputs this branch fuses; the fusion is an
    elementwise addition onto the same-resolution target tap right
    before that level's skip concatenation, mirroring the level-5 rule
    of adding onto the deepest tap.
    """

    def __init__(self, channels: dict, widths: tuple[int, ...] | None = None,
                 attention_levels: tuple[int, ...] = (3, 4, 5)):
        super().__init__()
        if widths is None:
            widths = default_decoder_widths(channels)
        if len(widths) != 5:
            raise ConfigError(f"decoder needs 5 level widths, got {len(widths)}")
        bad = set(attention_levels) - {3, 4, 5}
        if bad:
            raise ConfigError(f"attention levels must be within {{3,4,5}}, got {sorted(bad)}")
        self.attention_levels = tuple(sorted(attention_levels))
        self.widths = tuple(widths)
        w5, w4, w3, w2, w1 = widths
        self.conv5 = nn.Conv2d(channels[(5, 4)], w5, 3, padding=1)
        self.conv4 = nn.Conv2d(w5 + channels[(4, 1)], w4, 3, padding=1)
        self.conv3 = nn.Conv2d(w4 + channels[(3, 1)], w3, 3, padding=1)
        self.conv2 = nn.Conv2d(w3 + channels[(2, 1)], w2, 3, padding=1)
        self.conv1 = nn.Conv2d(w2 + channels[(1, 1)], w1, 3, padding=1)

    @property
    def out_channels(self) -> int:
        return self.widths[4]

    @staticmethod
    def _up2(x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def _fused_tap(self, pyramid: dict, attention: dict, level: int) -> torch.Tensor:
        tap_id = (5, 4) if level == 5 else (level, 1)
        tap = pyramid[tap_id]
        if level in self.attention_levels:
            if level not in attention:
                raise ConfigError(
                    f"attention output for enabled level {level} is missing"
                )
            tap = tap + attention[level]
        return tap

    def forward(self, pyramid: dict, attention: dict | None = None) -> torch.Tensor:
        """``pyramid`` maps tap-ids to (b, c, h, w) tensors of one frame;
        ``attention`` maps levels to same-shape attention outputs."""
        attention = attention or {}
        act = lambda t: F.leaky_relu(t, _LRELU_SLOPE)
        x = act(self.conv5(self._fused_tap(pyramid, attention, 5)))
        x = self._up2(x)
        x = act(self.conv4(torch.cat([x, self._fused_tap(pyramid, attention, 4)], dim=1)))
        x = self._up2(x)
        x = act(self.conv3(torch.cat([x, self._fused_tap(pyramid, attention, 3)], dim=1)))
        x = self._up2(x)
        x = act(self.conv2(torch.cat([x, pyramid[(2, 1)]], dim=1)))
        x = self._up2(x)
        x = act(self.conv1(torch.cat([x, pyramid[(1, 1)]], dim=1)))
        return x


def merge_branches(branch1: torch.Tensor | None, branch2: torch.Tensor,
                   mask: AblationMask) -> torch.Tensor:
    """Channel-wise concatenation of enabled branch outputs.

    With a single enabled branch the output passes through unchanged.
    """
    if not mask.second_branch:
        raise ConfigError("second branch is always enabled")
    if not mask.first_branch:
        return branch2
    if branch1 is None:
        raise ConfigError("first branch is enabled but produced no output")
    if branch1.shape[-2:] != branch2.shape[-2:]:
        raise ShapeError(
            f"branch outputs disagree spatially: {tuple(branch1.shape[-2:])} vs "
            f"{tuple(branch2.shape[-2:])}"
        )
    return torch.cat([branch1, branch2], dim=-3)
