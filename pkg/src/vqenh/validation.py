"""Input validation helpers for the public API.

These coerce the loose inputs accepted by the estimator facade and the
CLI (numpy arrays, lists of arrays, Frame objects) into the canonical
domain types, raising the package's typed errors on contract violations.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

from .core import Frame
from .errors import InvalidInputError, ShapeError

FrameLike = Union[Frame, np.ndarray]


def as_frame(x: FrameLike, index: int = 0) -> Frame:
    """Coerce a 2-D array (uint8 or float in [0, 1]) or Frame to a Frame."""
    if isinstance(x, Frame):
        return x
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D luminance plane, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return Frame.from_uint8(arr, index=index)
    return Frame(arr.astype(np.float32), index=index)


def as_frame_sequence(x: Union[np.ndarray, Sequence[FrameLike]]) -> list[Frame]:
    """Coerce a T x H x W array or a sequence of frame-likes to Frames.

    Frame indices are renumbered 0..T-1 to match sequence position.
    """
    if isinstance(x, np.ndarray):
        if x.ndim != 3:
            raise ShapeError(f"expected a T x H x W array, got shape {x.shape}")
        items: Iterable = (x[i] for i in range(x.shape[0]))
    else:
        items = x
    frames = [as_frame(item, index=i) for i, item in enumerate(items)]
    if not frames:
        raise InvalidInputError("frame sequence is empty")
    shapes = {f.data.shape for f in frames}
    if len(shapes) != 1:
        raise ShapeError(f"frames disagree on dimensions: {sorted(shapes)}")
    return frames


def frames_to_array(frames: Sequence[Frame]) -> np.ndarray:
    """Stack Frames into a T x H x W float32 array."""
    return np.stack([f.data for f in frames], axis=0)


def check_same_shape(a: Frame, b: Frame, what: str = "frames") -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{what} must share dimensions: {a.data.shape} vs {b.data.shape}"
        )


def check_positive_int(value: int, name: str) -> int:
    value = int(value)
    if value < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {value}")
    return value
