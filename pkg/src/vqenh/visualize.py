"""Attention visualization.

For a chosen query pixel, renders the target frame with the pixel
marked next to the reference frame with the top-k correlated positions
marked, both at the attention grid's resolution.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from PIL import Image, ImageDraw

from .attention import top_k_correlations
from .core import ATTENTION_BLOCK_TABLE, Frame, make_triplet, pad_to_multiple
from .errors import ConfigError, InvalidInputError
from .features import REFERENCE_TAPS, TARGET_TAPS
from .pipeline import Generator

__all__ = ["visualize_attention"]


def _grid_image(frame: Frame, grid: tuple[int, int], zoom: int) -> Image.Image:
    img = Image.fromarray(frame.to_uint8(), mode="L").convert("RGB")
    img = img.resize((grid[1], grid[0]), Image.BILINEAR)
    return img.resize((grid[1] * zoom, grid[0] * zoom), Image.NEAREST)


def _mark(draw: ImageDraw.ImageDraw, pos: tuple[int, int], zoom: int,
          color: tuple[int, int, int], width: int = 2) -> None:
    y, x = pos
    cx, cy = x * zoom + zoom // 2, y * zoom + zoom // 2
    r = max(zoom // 2, 3)
    draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=color, width=width)


def visualize_attention(generator: Generator, frames: Sequence[Frame], t: int,
                        query_pixels: Sequence[tuple[int, int]], block: int = 1,
                        k: int = 16, out_dir=".", zoom: int = 8) -> list[str]:
    """Write one PNG per query pixel; returns the written paths.

    Query pixels are given in frame coordinates and mapped onto the
    attention grid of the chosen block.
    """
    key = str(block)
    if key not in generator.attention_blocks:
        enabled = sorted(generator.attention_blocks)
        raise ConfigError(
            f"attention block {block} is not enabled in this model "
            f"(enabled: {enabled or 'none'})"
        )
    module = generator.attention_blocks[key]
    mask = generator.mask
    _, level, _ = ATTENTION_BLOCK_TABLE[block]
    triplet = make_triplet(list(frames), t)
    target, _ = pad_to_multiple(triplet.target, 16)
    ref_frame = {"preceding": triplet.preceding,
                 "succeeding": triplet.succeeding}[mask.block_reference(block)]
    reference, _ = pad_to_multiple(ref_frame, 16)

    import torch

    with torch.no_grad():
        tgt_taps = generator.backbone(
            torch.from_numpy(target.data.copy())[None, None], TARGET_TAPS)
        ref_taps = generator.backbone(
            torch.from_numpy(reference.data.copy())[None, None], REFERENCE_TAPS)
        cmap = module.correlation(tgt_taps[(level, 1)].squeeze(0),
                                  ref_taps[(level, 1)].squeeze(0))

    grid = cmap.query_grid
    scale_y = target.height / grid[0]
    scale_x = target.width / grid[1]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for py, px in query_pixels:
        if not (0 <= py < triplet.height and 0 <= px < triplet.width):
            raise InvalidInputError(
                f"query pixel ({py}, {px}) outside {triplet.height}x{triplet.width}"
            )
        qpos = (min(int(py / scale_y), grid[0] - 1),
                min(int(px / scale_x), grid[1] - 1))
        top = top_k_correlations(cmap, qpos, min(k, grid[0] * grid[1]))

        left = _grid_image(target, grid, zoom)
        _mark(ImageDraw.Draw(left), qpos, zoom, (255, 48, 48))
        right = _grid_image(reference, cmap.reference_grid, zoom)
        draw = ImageDraw.Draw(right)
        for rank, (pos, _weight) in enumerate(top):
            shade = 255 - int(160 * rank / max(len(top) - 1, 1))
            _mark(draw, pos, zoom, (48, shade, 48))

        canvas = Image.new("RGB", (left.width + right.width + zoom, left.height),
                           (255, 255, 255))
        canvas.paste(left, (0, 0))
        canvas.paste(right, (left.width + zoom, 0))
        path = out_dir / f"attention_block{block}_frame{t}_y{py}x{px}.png"
        canvas.save(path)
        paths.append(str(path))
    return paths
