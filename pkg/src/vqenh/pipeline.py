"""End-to-end generator assembly and sliding-window video enhancement.

The generator chains: frozen feature pyramids -> up to six attention
blocks (levels 3..5 per reference) -> two progressive decoder branches
-> branch merge -> QP-conditional head with residual output. Large
frames can be enhanced as a grid of tiles; every output pixel is
written exactly once. Tile input windows carry a context margin
(default: the convolutional receptive field) so that with attention
disabled, tiled and untiled outputs agree bit-exactly; attention's
global scope is the only source of tiling differences. Pass
``tile_context=0`` for hard input splits.
"""

from __future__ import annotations

import time
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .attention import AttentionBlock
from .core import (ATTENTION_BLOCK_TABLE, AblationMask, ClipTriplet, Frame,
                   ModelConfig, QPCode, crop_frame, make_triplet, pad_to_multiple)
from .decoder import DecoderBranch, default_decoder_widths, merge_branches
from .errors import ConfigError, NumericError, ShapeError
from .features import (REFERENCE_TAPS, TARGET_TAPS, FeatureBackbone,
                       build_backbone)
from .qpadapt import QPAdaptHead

__all__ = [
    "Generator",
    "build_generator",
    "enhance_frame",
    "enhance_sequence",
    "count_parameters",
]


class Generator(nn.Module):
    """The full enhancement network for one model configuration."""

    def __init__(self, config: ModelConfig, backbone: Optional[FeatureBackbone] = None):
        super().__init__()
        config.ablation_mask.validate()
        self.config = config
        self.mask = config.ablation_mask
        self.backbone = backbone if backbone is not None else build_backbone(
            config.backbone, config.backbone_weights, config.backbone_post_activation)
        channels = self.backbone.channels
        widths = config.decoder_channel_widths or default_decoder_widths(channels)

        blocks = {}
        for b in self.mask.enabled_blocks():
            _, level, branch = ATTENTION_BLOCK_TABLE[b]
            if branch == "first" and not self.mask.first_branch:
                continue  # nothing to inject into
            blocks[str(b)] = AttentionBlock(
                channels[(level, 1)], level,
                projection_channels=config.attention_projection_channels,
                downsample_factor=config.attention_downsample_factor,
                scaled_logits=config.attention_scaled_logits,
            )
        self.attention_blocks = nn.ModuleDict(blocks)

        self.second_branch = DecoderBranch(
            channels, widths, attention_levels=self._branch_levels("second"))
        if self.mask.first_branch:
            self.first_branch = DecoderBranch(
                channels, widths, attention_levels=self._branch_levels("first"))
            merged = 2 * widths[4]
        else:
            self.first_branch = None
            merged = widths[4]
        self.qp_head = QPAdaptHead(
            merged, len(config.qp_vocabulary),
            stage_channels=config.qp_stage_channels,
            enabled=self.mask.qp_adaptation,
            residual=config.residual_output,
        )

    def _branch_levels(self, branch: str) -> tuple[int, ...]:
        if branch == "first" and not self.mask.first_branch:
            return ()
        return tuple(sorted(
            ATTENTION_BLOCK_TABLE[b][1] for b in self.mask.branch_blocks(branch)
        ))

    def _reference_taps_needed(self) -> dict[str, bool]:
        needed = {"preceding": False, "succeeding": False}
        for b in self.attention_blocks:
            needed[self.mask.block_reference(int(b))] = True
        return needed

    def forward(self, preceding: torch.Tensor, target: torch.Tensor,
                succeeding: torch.Tensor, one_hot: torch.Tensor,
                clamp: bool = False) -> torch.Tensor:
        """Enhance a batch of luma triplets (each (b, 1, h, w))."""
        if target.shape[-2] % 16 or target.shape[-1] % 16:
            raise ShapeError(
                f"frame dims must be multiples of 16, got {tuple(target.shape[-2:])}"
            )
        target_taps = self.backbone(target, TARGET_TAPS)
        needed = self._reference_taps_needed()
        ref_taps = {}
        if needed["preceding"]:
            ref_taps["preceding"] = self.backbone(preceding, REFERENCE_TAPS)
        if needed["succeeding"]:
            ref_taps["succeeding"] = self.backbone(succeeding, REFERENCE_TAPS)

        attention = {"first": {}, "second": {}}
        for key, block in self.attention_blocks.items():
            b = int(key)
            ref_name, level, branch = ATTENTION_BLOCK_TABLE[b]
            reference = ref_taps[self.mask.block_reference(b)][(level, 1)]
            attention[branch][level] = block(target_taps[(level, 1)], reference)

        branch2 = self.second_branch(target_taps, attention["second"])
        branch1 = None
        if self.first_branch is not None:
            branch1 = self.first_branch(target_taps, attention["first"])
        merged = merge_branches(branch1, branch2, self.mask)
        return self.qp_head(merged, one_hot, target_luma=target, clamp=clamp)

    def conv_context(self) -> int:
        """One-sided receptive-field radius of the convolutional path
        (everything except attention), used as the default tile margin."""
        radius = 0
        scale = 1
        level_convs = getattr(self.backbone, "LEVEL_CONVS", (1, 1, 1, 1, 4))
        for level in range(1, 6):
            radius += level_convs[level - 1] * scale  # 3x3 convs at this level
            if level < 5:
                radius += scale  # pooling window
                scale *= 2
        # decoder: one conv per level on the way back up, plus upsampling
        for _ in range(5):
            radius += scale
            if scale > 1:
                radius += scale  # bilinear interpolation support
                scale //= 2
        # qp head: three gated convs plus the projection, all 3x3 at full res
        radius += 4
        return radius

    def parameter_counts(self) -> dict[str, int]:
        """Learnable parameters per component (frozen backbone excluded)."""
        def count(module) -> int:
            if module is None:
                return 0
            return sum(p.numel() for p in module.parameters() if p.requires_grad)

        counts = {}
        for key in sorted(self.attention_blocks, key=int):
            counts[f"attention_block_{key}"] = count(self.attention_blocks[key])
        counts["first_branch"] = count(self.first_branch)
        counts["second_branch"] = count(self.second_branch)
        counts["qp_adaptation"] = count(self.qp_head)
        counts["total"] = sum(counts.values())
        return counts


def build_generator(config: ModelConfig) -> Generator:
    """Construct a generator with seeded, reproducible initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        return Generator(config)


def count_parameters(model: nn.Module, granularity: str = "component") -> dict[str, int]:
    """Exact learnable-parameter counts.

    ``granularity`` is "component" (named module groups plus total) or
    "tensor" (every parameter tensor).
    """
    if granularity == "component" and isinstance(model, Generator):
        return model.parameter_counts()
    if granularity == "component":
        counts = {}
        for name, child in model.named_children():
            n = sum(p.numel() for p in child.parameters() if p.requires_grad)
            if n:
                counts[name] = n
        counts["total"] = sum(p.numel() for p in model.parameters() if p.requires_grad)
        return counts
    if granularity == "tensor":
        out = {name: p.numel() for name, p in model.named_parameters() if p.requires_grad}
        out["total"] = sum(out.values())
        return out
    raise ConfigError(f"unknown granularity {granularity!r} (component|tensor)")


# ---------------------------------------------------------------------------
# Frame / sequence enhancement


def _triplet_tensors(triplet: ClipTriplet) -> tuple[torch.Tensor, ...]:
    def t(frame: Frame) -> torch.Tensor:
        return torch.from_numpy(frame.data.copy()).reshape(1, 1, *frame.data.shape)

    return t(triplet.preceding), t(triplet.target), t(triplet.succeeding)


def enhance_frame(triplet: ClipTriplet, qp: QPCode, model: Generator) -> Frame:
    """Enhance one target frame from its triplet.

    Inputs whose dims are not multiples of 16 are reflectively padded and
    the output cropped back.
    """
    if tuple(qp.vocabulary) != tuple(model.config.qp_vocabulary):
        raise ConfigError(
            f"QP code vocabulary {qp.vocabulary} does not match the model's "
            f"{model.config.qp_vocabulary}"
        )
    padded, record = pad_to_multiple(triplet.target, 16)
    if record.is_identity:
        frames = triplet
    else:
        frames = ClipTriplet(
            preceding=pad_to_multiple(triplet.preceding, 16)[0],
            target=padded,
            succeeding=pad_to_multiple(triplet.succeeding, 16)[0],
        )
    pre, tgt, suc = _triplet_tensors(frames)
    one_hot = torch.from_numpy(qp.one_hot.copy()).unsqueeze(0)
    with torch.no_grad():
        out = model(pre, tgt, suc, one_hot, clamp=True)
    data = out.squeeze(0).squeeze(0).numpy()
    if not np.isfinite(data).all():
        raise NumericError("enhanced frame contains non-finite values")
    result = Frame(data, index=triplet.target.index)
    return crop_frame(result, record) if not record.is_identity else result


def _tile_grid(extent: int, tile: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + tile, extent)) for lo in range(0, extent, tile)]


def _crop_triplet(triplet: ClipTriplet, y0, y1, x0, x1) -> ClipTriplet:
    def c(frame: Frame) -> Frame:
        return Frame(frame.data[y0:y1, x0:x1], index=frame.index)

    return ClipTriplet(c(triplet.preceding), c(triplet.target), c(triplet.succeeding))


def enhance_frame_tiled(triplet: ClipTriplet, qp: QPCode, model: Generator,
                        tile_size: int, tile_context: Optional[int] = None) -> Frame:
    """Enhance one frame as a grid of independently processed tiles.

    The output is an exact partition; each tile's input window extends by
    ``tile_context`` pixels of true frame content on every side (clamped
    at borders). ``None`` selects the convolutional receptive field.
    """
    if tile_size % 16 != 0:
        raise ConfigError(f"tile size must be a multiple of 16, got {tile_size}")
    context = model.conv_context() if tile_context is None else int(tile_context)
    if context < 0:
        raise ConfigError(f"tile context must be >= 0, got {context}")
    h, w = triplet.height, triplet.width
    out = np.empty((h, w), dtype=np.float32)
    for y0, y1 in _tile_grid(h, tile_size):
        for x0, x1 in _tile_grid(w, tile_size):
            wy0, wy1 = max(0, y0 - context), min(h, y1 + context)
            wx0, wx1 = max(0, x0 - context), min(w, x1 + context)
            window = _crop_triplet(triplet, wy0, wy1, wx0, wx1)
            enhanced = enhance_frame(window, qp, model)
            out[y0:y1, x0:x1] = enhanced.data[y0 - wy0:y1 - wy0, x0 - wx0:x1 - wx0]
    return Frame(out, index=triplet.target.index)


def enhance_sequence(frames: Sequence[Frame], qp: QPCode, model: Generator,
                     tile_size: Optional[int] = None,
                     tile_context: Optional[int] = None) -> list[Frame]:
    """Sliding-window enhancement of a whole sequence.

    Every frame is enhanced once as the target, with boundary neighbors
    duplicated from the target at the sequence ends.
    """
    if len(frames) == 0:
        raise ShapeError("cannot enhance an empty sequence")
    if tile_size is None:
        tile_size = model.config.tile_size
    if tile_context is None:
        tile_context = model.config.tile_context
    out = []
    for t in range(len(frames)):
        triplet = make_triplet(frames, t)
        if tile_size is None or tile_size >= max(triplet.height, triplet.width):
            out.append(enhance_frame(triplet, qp, model))
        else:
            out.append(enhance_frame_tiled(triplet, qp, model, tile_size, tile_context))
    return out


def enhancement_speed(model: Generator, qp: QPCode, size: int = 128,
                      repeats: int = 2) -> float:
    """Frames per second for one size x size enhancement (best of repeats)."""
    frame = Frame(np.full((size, size), 0.5, dtype=np.float32))
    triplet = ClipTriplet(frame, frame, frame)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        enhance_frame(triplet, qp, model)
        best = min(best, time.perf_counter() - start)
    return 1.0 / best if best > 0 else float("inf")
