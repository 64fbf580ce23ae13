"""Domain types and pure helper operations shared by every other module.

Frames are single-channel luminance planes normalized to [0, 1]
(8-bit samples divided by 255). All types are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigError, InvalidInputError, ShapeError, UnknownQPError

__all__ = [
    "Frame",
    "ClipTriplet",
    "QPCode",
    "AblationMask",
    "ModelConfig",
    "TrainConfig",
    "CropRecord",
    "ATTENTION_BLOCK_TABLE",
    "TABLE_ROWS",
    "make_triplet",
    "encode_qp",
    "decode_qp",
    "pad_to_multiple",
    "crop_frame",
    "load_config",
    "save_config",
]


# ---------------------------------------------------------------------------
# Frames


@dataclass(frozen=True)
class Frame:
    """A single luminance plane with samples in [0, 1].

    ``data`` is a read-only 2-D float32 array; ``index`` is the frame's
    position in its source sequence.
    """

    data: np.ndarray
    index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"frame data must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError("frame data must be non-empty")
        if not np.isfinite(arr).all():
            raise InvalidInputError("frame contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidInputError(
                f"frame samples must lie in [0, 1], got range "
                f"[{arr.min():.4g}, {arr.max():.4g}]"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_uint8(cls, samples: np.ndarray, index: int = 0) -> "Frame":
        """Normalize 8-bit samples by 255."""
        samples = np.asarray(samples)
        if samples.dtype != np.uint8:
            raise InvalidInputError(f"expected uint8 samples, got {samples.dtype}")
        return cls(samples.astype(np.float32) / 255.0, index=index)

    def to_uint8(self) -> np.ndarray:
        """Invert the [0, 1] normalization with round-half-away-from-zero."""
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ClipTriplet:
    """The (preceding, target, succeeding) window fed to the generator.

    At sequence boundaries the missing neighbor is an exact copy of the
    target frame.
    """

    preceding: Frame
    target: Frame
    succeeding: Frame

    def __post_init__(self):
        shapes = {f.data.shape for f in (self.preceding, self.target, self.succeeding)}
        if len(shapes) != 1:
            raise ShapeError(f"triplet frames disagree on dimensions: {sorted(shapes)}")

    @property
    def height(self) -> int:
        return self.target.height

    @property
    def width(self) -> int:
        return self.target.width

    def frames(self) -> tuple[Frame, Frame, Frame]:
        return (self.preceding, self.target, self.succeeding)


def make_triplet(frames: Sequence[Frame], t: int) -> ClipTriplet:
    """Sliding-window triplet around index ``t`` with boundary duplication.

    The first frame duplicates itself as its own preceding neighbor and
    the last frame as its own succeeding neighbor.
    """
    if len(frames) == 0:
        raise InvalidInputError("cannot build a triplet from an empty sequence")
    if not 0 <= t < len(frames):
        raise InvalidInputError(f"target index {t} out of range for {len(frames)} frames")
    preceding = frames[t - 1] if t > 0 else frames[t]
    succeeding = frames[t + 1] if t + 1 < len(frames) else frames[t]
    return ClipTriplet(preceding=preceding, target=frames[t], succeeding=succeeding)


# ---------------------------------------------------------------------------
# QP encoding


@dataclass(frozen=True)
class QPCode:
    """A quantization parameter with its one-hot code over the vocabulary."""

    value: int
    vocabulary: tuple[int, ...]
    one_hot: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.one_hot, dtype=np.float32)
        vec.setflags(write=False)
        object.__setattr__(self, "one_hot", vec)
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))


def _check_vocabulary(vocabulary: Sequence[int]) -> tuple[int, ...]:
    vocab = tuple(int(v) for v in vocabulary)
    if len(vocab) == 0:
        raise InvalidInputError("QP vocabulary must be non-empty")
    if len(set(vocab)) != len(vocab):
        raise InvalidInputError(f"QP vocabulary has duplicates: {vocab}")
    if list(vocab) != sorted(vocab):
        raise InvalidInputError(f"QP vocabulary must be sorted ascending: {vocab}")
    return vocab


def encode_qp(value: int, vocabulary: Sequence[int]) -> QPCode:
    """One-hot encode ``value`` over the trained QP vocabulary.

    Values outside the vocabulary raise :class:`UnknownQPError`; there is
    no silent nearest-neighbor mapping (use an explicit override instead).
    """
    vocab = _check_vocabulary(vocabulary)
    value = int(value)
    if value not in vocab:
        raise UnknownQPError(
            f"QP {value} is not in the trained vocabulary {vocab}; "
            f"pass an explicit substitute (--qp-as) to enhance at untrained QPs"
        )
    one_hot = np.zeros(len(vocab), dtype=np.float32)
    one_hot[vocab.index(value)] = 1.0
    return QPCode(value=value, vocabulary=vocab, one_hot=one_hot)


def decode_qp(code: QPCode) -> int:
    """Inverse of :func:`encode_qp` on the vocabulary."""
    return code.vocabulary[int(np.argmax(code.one_hot))]


# ---------------------------------------------------------------------------
# Ablation masks

# Block -> (reference frame, pyramid level, decoder branch). Blocks are
# numbered left to right: odd blocks attend the preceding frame and feed
# the second branch, even blocks belong to the first branch and attend
# the succeeding frame, falling back to the preceding frame when the
# succeeding frame is disabled (the published ablation ladder runs the
# first branch before the succeeding frame is introduced).
ATTENTION_BLOCK_TABLE: dict[int, tuple[str, int, str]] = {
    1: ("preceding", 3, "second"),
    2: ("succeeding", 3, "first"),
    3: ("preceding", 4, "second"),
    4: ("succeeding", 4, "first"),
    5: ("preceding", 5, "second"),
    6: ("succeeding", 5, "first"),
}


@dataclass(frozen=True)
class AblationMask:
    """Component on/off switches. The target frame, feature extraction,
    and the second decoder branch are always on."""

    preceding_frame: bool = True
    succeeding_frame: bool = True
    attention_block_1: bool = True
    attention_block_2: bool = True
    attention_block_3: bool = True
    attention_block_4: bool = True
    attention_block_5: bool = True
    attention_block_6: bool = True
    first_branch: bool = True
    second_branch: bool = True
    qp_adaptation: bool = True

    def block_enabled(self, block: int) -> bool:
        return getattr(self, f"attention_block_{block}")

    def enabled_blocks(self) -> tuple[int, ...]:
        return tuple(b for b in range(1, 7) if self.block_enabled(b))

    def block_reference(self, block: int) -> str:
        """Resolve the reference frame a block actually attends."""
        ref, _, _ = ATTENTION_BLOCK_TABLE[block]
        if ref == "succeeding" and not self.succeeding_frame:
            return "preceding"
        return ref

    def branch_blocks(self, branch: str) -> tuple[int, ...]:
        return tuple(
            b for b in self.enabled_blocks() if ATTENTION_BLOCK_TABLE[b][2] == branch
        )

    def validate(self) -> "AblationMask":
        """Check the component dependency rules, naming any violation."""
        if not self.second_branch:
            raise ConfigError("invalid ablation mask: second_branch is always enabled")
        for b in self.enabled_blocks():
            ref, _, _ = ATTENTION_BLOCK_TABLE[b]
            if ref == "preceding" and not self.preceding_frame:
                raise ConfigError(
                    f"invalid ablation mask: attention_block_{b} requires preceding_frame"
                )
            if ref == "succeeding" and not (self.succeeding_frame or self.preceding_frame):
                raise ConfigError(
                    f"invalid ablation mask: attention_block_{b} requires a reference "
                    f"frame (succeeding_frame, or preceding_frame as fallback)"
                )
        if self.first_branch and not self.enabled_blocks():
            raise ConfigError(
                "invalid ablation mask: first_branch requires at least one "
                "enabled attention block"
            )
        return self

    @classmethod
    def full(cls) -> "AblationMask":
        return cls()

    @classmethod
    def table_row(cls, row: str) -> "AblationMask":
        """One of the nine published ablation configurations A..I."""
        row = row.upper()
        if row not in TABLE_ROWS:
            raise ConfigError(f"unknown ablation row {row!r}; expected one of A..I")
        return TABLE_ROWS[row]


def _row(blocks: tuple[int, ...], preceding: bool, succeeding: bool,
         first: bool, qp: bool) -> AblationMask:
    kwargs = {f"attention_block_{b}": (b in blocks) for b in range(1, 7)}
    return AblationMask(
        preceding_frame=preceding,
        succeeding_frame=succeeding,
        first_branch=first,
        second_branch=True,
        qp_adaptation=qp,
        **kwargs,
    )


TABLE_ROWS: dict[str, AblationMask] = {
    "A": _row((), False, False, False, False),
    "B": _row((), False, False, False, True),
    "C": _row((1,), True, False, False, True),
    "D": _row((1, 3), True, False, False, True),
    "E": _row((1, 3, 5), True, False, False, True),
    "F": _row((1, 3, 5), True, False, True, True),
    "G": _row((1, 2, 3, 5), True, False, True, True),
    "H": _row((1, 2, 3, 4, 5), True, True, True, True),
    "I": _row((1, 2, 3, 4, 5, 6), True, True, True, True),
}


# ---------------------------------------------------------------------------
# Model configuration


_BACKBONES = ("pretrained", "test-stub")
_DOWNSAMPLE_FACTORS = (1, 2, 4, 6)


@dataclass(frozen=True)
class ModelConfig:
    """Full hyperparameter record for one model build.

    ``decoder_channel_widths`` lists convolution output widths for decoder
    levels 5 down to 1; ``None`` derives them from the backbone tap widths.
    """

    qp_vocabulary: tuple[int, ...] = (22, 27, 32, 37)
    attention_downsample_factor: int = 1
    ablation_mask: AblationMask = field(default_factory=AblationMask.full)
    decoder_channel_widths: Optional[tuple[int, ...]] = None
    loss_weights: tuple[float, float] = (10.0, 10.0)
    backbone: str = "test-stub"
    backbone_weights: Optional[str] = None
    backbone_post_activation: bool = True
    tile_size: Optional[int] = None
    tile_context: Optional[int] = None  # None = auto (conv receptive field)
    tile_feather: bool = False
    seed: int = 1234
    attention_projection_channels: Optional[int] = None
    attention_scaled_logits: bool = False
    qp_stage_channels: tuple[int, int, int] = (64, 64, 64)
    residual_output: bool = True
    disc_widths: tuple[int, ...] = (64, 128, 256, 512)
    disc_strides: tuple[int, ...] = (2, 2, 2, 1)
    disc_kernel: int = 4
    disc_norm: str = "instance"
    disc_conditional: bool = False

    def __post_init__(self):
        _check_vocabulary(self.qp_vocabulary)
        object.__setattr__(self, "qp_vocabulary", tuple(int(v) for v in self.qp_vocabulary))
        alpha, beta = self.loss_weights
        if alpha < 0 or beta < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self.loss_weights}")
        object.__setattr__(self, "loss_weights", (float(alpha), float(beta)))
        if self.attention_downsample_factor not in _DOWNSAMPLE_FACTORS:
            raise ConfigError(
                f"attention_downsample_factor must be one of {_DOWNSAMPLE_FACTORS}, "
                f"got {self.attention_downsample_factor}"
            )
        if self.backbone not in _BACKBONES:
            raise ConfigError(f"backbone must be one of {_BACKBONES}, got {self.backbone!r}")
        if self.tile_size is not None and self.tile_size % 16 != 0:
            raise ConfigError(f"tile_size must be a multiple of 16, got {self.tile_size}")
        if self.decoder_channel_widths is not None:
            widths = tuple(int(w) for w in self.decoder_channel_widths)
            if len(widths) != 5 or any(w <= 0 for w in widths):
                raise ConfigError(
                    "decoder_channel_widths must list 5 positive widths (levels 5..1)"
                )
            object.__setattr__(self, "decoder_channel_widths", widths)
        if len(self.qp_stage_channels) != 3:
            raise ConfigError("qp_stage_channels must list exactly 3 stage widths")
        object.__setattr__(self, "qp_stage_channels", tuple(int(c) for c in self.qp_stage_channels))
        if len(self.disc_widths) != len(self.disc_strides):
            raise ConfigError("disc_widths and disc_strides must have equal length")
        object.__setattr__(self, "disc_widths", tuple(int(w) for w in self.disc_widths))
        object.__setattr__(self, "disc_strides", tuple(int(s) for s in self.disc_strides))
        if self.disc_norm not in ("instance", "none"):
            raise ConfigError(f"disc_norm must be 'instance' or 'none', got {self.disc_norm!r}")
        if isinstance(self.ablation_mask, dict):
            object.__setattr__(self, "ablation_mask", AblationMask(**self.ablation_mask))
        self.ablation_mask.validate()

    @property
    def alpha(self) -> float:
        return self.loss_weights[0]

    @property
    def beta(self) -> float:
        return self.loss_weights[1]

    def with_mask(self, mask: AblationMask) -> "ModelConfig":
        return replace(self, ablation_mask=mask)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters for the adversarial training loop."""

    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    steps: int = 1000
    checkpoint_every: int = 500
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


# ---------------------------------------------------------------------------
# Config file I/O (YAML, nested sections mirroring the dataclasses)


def _config_to_dict(config) -> dict:
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, AblationMask):
            value = {g.name: getattr(value, g.name) for g in fields(value)}
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def _tupled(d: dict, keys: Sequence[str]) -> dict:
    d = dict(d)
    for k in keys:
        if k in d and isinstance(d[k], list):
            d[k] = tuple(d[k])
    return d


_MODEL_TUPLE_KEYS = (
    "qp_vocabulary", "decoder_channel_widths", "loss_weights",
    "qp_stage_channels", "disc_widths", "disc_strides",
)


def config_to_dict(model: ModelConfig, train: Optional[TrainConfig] = None) -> dict:
    doc = {"model": _config_to_dict(model)}
    if train is not None:
        doc["train"] = _config_to_dict(train)
    return doc


def config_from_dict(doc: dict) -> tuple[ModelConfig, TrainConfig]:
    if not isinstance(doc, dict):
        raise ConfigError("configuration document must be a mapping")
    model_doc = _tupled(doc.get("model", {}), _MODEL_TUPLE_KEYS)
    mask_doc = model_doc.get("ablation_mask")
    if isinstance(mask_doc, str):
        model_doc["ablation_mask"] = AblationMask.table_row(mask_doc)
    elif isinstance(mask_doc, dict):
        model_doc["ablation_mask"] = AblationMask(**mask_doc)
    try:
        model = ModelConfig(**model_doc)
        train = TrainConfig(**doc.get("train", {}))
    except TypeError as exc:
        raise ConfigError(f"unknown configuration field: {exc}") from exc
    return model, train


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read a YAML configuration file (``model:`` and ``train:`` sections)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return config_from_dict(doc)


def save_config(path, model: ModelConfig, train: Optional[TrainConfig] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(model, train), fh, sort_keys=True)


# ---------------------------------------------------------------------------
# Padding


@dataclass(frozen=True)
class CropRecord:
    """Inversion record for :func:`pad_to_multiple`."""

    height: int
    width: int
    padded_height: int
    padded_width: int

    @property
    def is_identity(self) -> bool:
        return self.height == self.padded_height and self.width == self.padded_width


def pad_to_multiple(frame: Frame, m: int) -> tuple[Frame, CropRecord]:
    """Reflectively pad to the smallest dims that are multiples of ``m``.

    Returns the padded frame and a crop record that inverts the padding
    bit-exactly via :func:`crop_frame`.
    """
    if m < 1:
        raise InvalidInputError(f"padding multiple must be >= 1, got {m}")
    h, w = frame.height, frame.width
    ph = (-h) % m
    pw = (-w) % m
    record = CropRecord(height=h, width=w, padded_height=h + ph, padded_width=w + pw)
    if ph == 0 and pw == 0:
        return frame, record
    data = np.pad(frame.data, ((0, ph), (0, pw)), mode="reflect")
    return Frame(data, index=frame.index), record


def crop_frame(frame: Frame, record: CropRecord) -> Frame:
    """Undo :func:`pad_to_multiple`."""
    if record.height > frame.height or record.width > frame.width:
        raise ShapeError(
            f"crop record {record.height}x{record.width} exceeds frame "
            f"{frame.height}x{frame.width}"
        )
    return Frame(frame.data[: record.height, : record.width], index=frame.index)
