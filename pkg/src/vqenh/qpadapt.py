"""QP-conditional adaptation head.

The one-hot QP code passes through a per-stage fully connected layer
and a softplus, yielding a strictly positive gate vector that scales
feature channels before each of three convolutions. A final 1-channel
convolution produces the residual added onto the compressed target
luma. With adaptation disabled the same convolution stack runs with
gates identically 1 (and no fully connected parameters exist).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import Frame, QPCode
from .errors import InvalidInputError, ShapeError

__all__ = ["QPAdaptHead", "qp_gate", "adapt"]

_LRELU_SLOPE = 0.2
N_STAGES = 3


def _check_one_hot(one_hot: torch.Tensor, vocab_size: int) -> torch.Tensor:
    if one_hot.dim() == 1:
        one_hot = one_hot.unsqueeze(0)
    if one_hot.shape[-1] != vocab_size:
        raise InvalidInputError(
            f"one-hot length {one_hot.shape[-1]} does not match vocabulary size {vocab_size}"
        )
    sums = one_hot.sum(dim=-1)
    if not torch.allclose(sums, torch.ones_like(sums)):
        raise InvalidInputError("one-hot code must sum to exactly 1")
    return one_hot


class QPAdaptHead(nn.Module):
    """Three QP-gated convolution stages plus the output projection."""

    def __init__(self, in_channels: int, vocab_size: int,
                 stage_channels: tuple[int, int, int] = (64, 64, 64),
                 enabled: bool = True, residual: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.vocab_size = vocab_size
        self.enabled = enabled
        self.residual = residual
        self.gate_widths = (in_channels, stage_channels[0], stage_channels[1])
        self.convs = nn.ModuleList([
            nn.Conv2d(in_channels, stage_channels[0], 3, padding=1),
            nn.Conv2d(stage_channels[0], stage_channels[1], 3, padding=1),
            nn.Conv2d(stage_channels[1], stage_channels[2], 3, padding=1),
        ])
        self.project = nn.Conv2d(stage_channels[2], 1, 3, padding=1)
        # zero residual at init: the untrained model reproduces its input
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)
        if enabled:
            self.gates = nn.ModuleList(
                nn.Linear(vocab_size, width) for width in self.gate_widths
            )
        else:
            self.gates = None

    def gate(self, one_hot: torch.Tensor, stage: int) -> torch.Tensor:
        """softplus(FC_stage(one_hot)): strictly positive channel weights."""
        if not 0 <= stage < N_STAGES:
            raise InvalidInputError(f"stage must be in [0, {N_STAGES}), got {stage}")
        one_hot = _check_one_hot(one_hot, self.vocab_size)
        if not self.enabled:
            return torch.ones(one_hot.shape[0], self.gate_widths[stage],
                              dtype=one_hot.dtype, device=one_hot.device)
        return F.softplus(self.gates[stage](one_hot))

    def forward(self, features: torch.Tensor, one_hot: torch.Tensor,
                target_luma: torch.Tensor | None = None,
                clamp: bool = False) -> torch.Tensor:
        """Returns the enhanced luma (b, 1, h, w).

        ``target_luma`` is required in residual mode; ``clamp`` bounds the
        output to [0, 1] and should be on for inference only so training
        keeps gradients through out-of-range values.
        """
        if features.dim() != 4 or features.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected features (b, {self.in_channels}, h, w), got {tuple(features.shape)}"
            )
        x = features
        for stage in range(N_STAGES):
            g = self.gate(one_hot, stage)
            x = x * g.unsqueeze(-1).unsqueeze(-1)
            x = F.leaky_relu(self.convs[stage](x), _LRELU_SLOPE)
        out = self.project(x)
        if self.residual:
            if target_luma is None:
                raise InvalidInputError("residual mode needs the compressed target luma")
            if target_luma.shape[-2:] != out.shape[-2:]:
                raise ShapeError(
                    f"target luma {tuple(target_luma.shape[-2:])} does not match "
                    f"features {tuple(out.shape[-2:])}"
                )
            out = out + target_luma
        if clamp:
            out = out.clamp(0.0, 1.0)
        return out

    def gate_parameter_count(self) -> int:
        """Parameters removed when adaptation is disabled:
        sum over stages of (vocab + 1) * gated channels."""
        return sum((self.vocab_size + 1) * w for w in self.gate_widths)


def qp_gate(one_hot, stage: int, head: QPAdaptHead) -> torch.Tensor:
    if not isinstance(one_hot, torch.Tensor):
        one_hot = torch.as_tensor(one_hot, dtype=torch.float32)
    return head.gate(one_hot, stage).squeeze(0)


def adapt(features: torch.Tensor, qp: QPCode, head: QPAdaptHead,
          target: Frame, clamp: bool = True) -> Frame:
    """Functional wrapper producing a Frame from merged branch features."""
    one_hot = torch.from_numpy(qp.one_hot.copy())
    luma = torch.from_numpy(target.data.copy()).reshape(1, 1, *target.data.shape)
    if features.dim() == 3:
        features = features.unsqueeze(0)
    with torch.no_grad():
        out = head(features, one_hot, target_luma=luma, clamp=clamp)
    data = out.squeeze(0).squeeze(0).numpy()
    if not clamp:
        data = data.clip(0.0, 1.0)
    return Frame(data, index=target.index)
