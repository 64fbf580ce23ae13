"""Evaluation metrics and the perceptual-metric plugin seam.

PSNR and single-scale SSIM run in-process. Learned perceptual scorers
are deliberate externals: a plugin is any executable taking two image
paths and printing one float; absent plugins yield an explicit
"unavailable" status rather than a fabricated number.
"""

from __future__ import annotations

import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Frame
from .errors import InvalidInputError, PluginError, ShapeError
from .validation import as_frame

__all__ = [
    "psnr",
    "ssim",
    "temporal_profile",
    "PluginResult",
    "PluginRegistry",
    "frame_to_png",
]


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    fa, fb = as_frame(a), as_frame(b)
    if fa.data.shape != fb.data.shape:
        raise ShapeError(f"frame dims differ: {fa.data.shape} vs {fb.data.shape}")
    return fa.data.astype(np.float64), fb.data.astype(np.float64)


def psnr(a, b) -> float:
    """10 log10(1 / MSE) on [0, 1] samples; identical frames give inf."""
    da, db = _pair(a, b)
    mse = float(np.mean((da - db) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a symmetric 1-D kernel."""
    n = len(kernel)
    rows = img.shape[0] - n + 1
    out = sum(img[i:i + rows, :] * kernel[i] for i in range(n))
    cols = img.shape[1] - n + 1
    return sum(out[:, i:i + cols] * kernel[i] for i in range(n))


def ssim(a, b, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale structural similarity with a Gaussian window."""
    da, db = _pair(a, b)
    if min(da.shape) < window:
        raise InvalidInputError(
            f"frames must be at least {window}x{window} for SSIM, got {da.shape}"
        )
    kernel = _gaussian_kernel(window, sigma)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    mu_a = _filter_valid(da, kernel)
    mu_b = _filter_valid(db, kernel)
    var_a = _filter_valid(da * da, kernel) - mu_a ** 2
    var_b = _filter_valid(db * db, kernel) - mu_b ** 2
    cov = _filter_valid(da * db, kernel) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def temporal_profile(frames: Sequence, row: int) -> np.ndarray:
    """Stack one fixed pixel row across time into a (time, width) image
    for flicker inspection."""
    frames = [as_frame(f) for f in frames]
    if len(frames) < 2:
        raise InvalidInputError("a temporal profile needs at least 2 frames")
    height = frames[0].height
    if not 0 <= row < height:
        raise InvalidInputError(f"row {row} out of range for height {height}")
    return np.stack([f.data[row, :] for f in frames], axis=0)


def frame_to_png(frame, path) -> None:
    from PIL import Image

    frame = as_frame(frame)
    Image.fromarray(frame.to_uint8(), mode="L").save(path)


@dataclass(frozen=True)
class PluginResult:
    status: str  # "ok" | "unavailable"
    value: Optional[float] = None
    detail: str = ""


class PluginRegistry:
    """External perceptual scorers.

    A plugin is a command prefix; it is invoked with two extra arguments
    (PNG paths for the two frames) and must print a single decimal float
    on stdout and exit 0.
    """

    def __init__(self):
        self._plugins: dict[str, list[str]] = {}

    def register(self, name: str, command: Sequence[str]) -> None:
        if not command:
            raise InvalidInputError(f"plugin {name!r} needs a non-empty command")
        self._plugins[name] = list(command)

    def available(self, name: str) -> bool:
        return name in self._plugins

    def evaluate(self, name: str, a, b) -> PluginResult:
        if name not in self._plugins:
            return PluginResult(status="unavailable",
                                detail=f"no plugin registered under {name!r}")
        with tempfile.TemporaryDirectory(prefix="vqenh-plugin-") as tmp:
            pa = Path(tmp) / "a.png"
            pb = Path(tmp) / "b.png"
            frame_to_png(a, pa)
            frame_to_png(b, pb)
            argv = self._plugins[name] + [str(pa), str(pb)]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=300)
            except OSError as exc:
                raise PluginError(f"plugin {name!r} failed to start: {exc}") from exc
        if proc.returncode != 0:
            raise PluginError(
                f"plugin {name!r} exited {proc.returncode}; "
                f"stdout={proc.stdout!r} stderr={proc.stderr!r}"
            )
        try:
            value = float(proc.stdout.strip().split()[-1])
        except (ValueError, IndexError) as exc:
            raise PluginError(
                f"plugin {name!r} printed no parseable float: {proc.stdout!r}"
            ) from exc
        return PluginResult(status="ok", value=value)
