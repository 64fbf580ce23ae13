"""Conditional cross-frame attention.

Queries come from a target-frame tap and keys from a reference-frame
tap (separate 1x1 projections); the softmax-normalized all-pairs
correlation map then re-weights the *raw* reference features, so there
is no value projection. Optional spatial downsampling of the attention
inputs trades correlation-map resolution for speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInputError, NumericError, ShapeError

__all__ = [
    "AttentionBlock",
    "CorrelationMap",
    "attend",
    "correlation_map",
    "top_k_correlations",
]


@dataclass
class CorrelationMap:
    """Row-stochastic attention weights.

    ``weights`` has shape (query positions) x (reference positions), both
    flattened row-major over the (possibly downsampled) grids.
    """

    weights: torch.Tensor
    query_grid: tuple[int, int]
    reference_grid: tuple[int, int]


def _ensure_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ShapeError(f"expected a (c, h, w) or (b, c, h, w) tensor, got {tuple(x.shape)}")


def _pad_to_factor(x: torch.Tensor, f: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph = (-h) % f
    pw = (-w) % f
    if ph == 0 and pw == 0:
        return x
    return F.pad(x, (0, pw, 0, ph), mode="replicate")


class AttentionBlock(nn.Module):
    """One attention block for a (target tap, reference tap) pair."""

    def __init__(self, channels: int, level: int, projection_channels: int | None = None,
                 downsample_factor: int = 1, scaled_logits: bool = False):
        super().__init__()
        self.level = level
        self.channels = channels
        self.projection_channels = projection_channels or channels
        self.downsample_factor = downsample_factor
        self.scaled_logits = scaled_logits
        self.query_projection = nn.Conv2d(channels, self.projection_channels, 1)
        self.key_projection = nn.Conv2d(channels, self.projection_channels, 1)

    def _check_inputs(self, target: torch.Tensor, reference: torch.Tensor) -> None:
        if target.shape != reference.shape:
            raise ShapeError(
                f"target and reference taps must share shape: "
                f"{tuple(target.shape)} vs {tuple(reference.shape)}"
            )
        if target.shape[-3] != self.channels:
            raise ShapeError(
                f"expected {self.channels} channels, got {target.shape[-3]}"
            )
        if not torch.isfinite(target).all() or not torch.isfinite(reference).all():
            raise NumericError("attention inputs contain non-finite values")

    def _weights_and_values(self, target: torch.Tensor, reference: torch.Tensor):
        """Shared core: returns (row-stochastic weights, flattened values,
        downsampled grid dims, padded dims)."""
        f = self.downsample_factor
        h, w = target.shape[-2:]
        if f > 1:
            target = _pad_to_factor(target, f)
            reference = _pad_to_factor(reference, f)
            hp, wp = target.shape[-2:]
            target = F.avg_pool2d(target, f)
            reference = F.avg_pool2d(reference, f)
        else:
            hp, wp = h, w
        b, c = target.shape[0], target.shape[1]
        hd, wd = target.shape[-2:]
        q = self.query_projection(target).reshape(b, self.projection_channels, hd * wd)
        k = self.key_projection(reference).reshape(b, self.projection_channels, hd * wd)
        logits = torch.bmm(q.transpose(1, 2), k)
        if self.scaled_logits:
            logits = logits / (self.projection_channels ** 0.5)
        weights = torch.softmax(logits, dim=-1)
        values = reference.reshape(b, c, hd * wd).transpose(1, 2)
        return weights, values, (hd, wd), (hp, wp)

    def forward(self, target: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
        """Reference features re-weighted toward the target; same shape as
        the target tap."""
        self._check_inputs(target, reference)
        target, squeeze = _ensure_batched(target)
        reference, _ = _ensure_batched(reference)
        h, w = target.shape[-2:]
        weights, values, (hd, wd), (hp, wp) = self._weights_and_values(target, reference)
        out = torch.bmm(weights, values)  # (b, hd*wd, c)
        out = out.transpose(1, 2).reshape(target.shape[0], -1, hd, wd)
        if self.downsample_factor > 1:
            out = F.interpolate(out, size=(hp, wp), mode="bilinear", align_corners=False)
            out = out[..., :h, :w]
        return out.squeeze(0) if squeeze else out

    def correlation(self, target: torch.Tensor, reference: torch.Tensor) -> CorrelationMap:
        """The row-stochastic map used by :meth:`forward` (unbatched input)."""
        self._check_inputs(target, reference)
        target, squeezed = _ensure_batched(target)
        reference, _ = _ensure_batched(reference)
        if not squeezed:
            raise ShapeError("correlation maps are defined per sample; pass (c, h, w)")
        weights, _, grid, _ = self._weights_and_values(target, reference)
        return CorrelationMap(weights=weights.squeeze(0), query_grid=grid, reference_grid=grid)


def attend(target_tap: torch.Tensor, reference_tap: torch.Tensor,
           block: AttentionBlock) -> torch.Tensor:
    return block(target_tap, reference_tap)


def correlation_map(target_tap: torch.Tensor, reference_tap: torch.Tensor,
                    block: AttentionBlock) -> CorrelationMap:
    return block.correlation(target_tap, reference_tap)


def top_k_correlations(cmap: CorrelationMap, query_position: tuple[int, int],
                       k: int) -> list[tuple[tuple[int, int], float]]:
    """The ``k`` strongest reference positions for one query position.

    Sorted by descending weight; ties break by row-major position order.
    """
    hq, wq = cmap.query_grid
    hr, wr = cmap.reference_grid
    row, col = query_position
    if not (0 <= row < hq and 0 <= col < wq):
        raise InvalidInputError(
            f"query position {query_position} out of bounds for grid {cmap.query_grid}"
        )
    if not 1 <= k <= hr * wr:
        raise InvalidInputError(f"k must be in [1, {hr * wr}], got {k}")
    weights = cmap.weights[row * wq + col].detach().cpu().numpy()
    order = sorted(range(hr * wr), key=lambda i: (-weights[i], i))
    return [((i // wr, i % wr), float(weights[i])) for i in order[:k]]
