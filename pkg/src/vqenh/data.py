"""Dataset ingestion.

Reads planar Y4M and headerless raw video, pairs raw sequences with
their compressed versions per QP, and cuts co-located non-overlapping
crops into shuffled training samples. A synthetic degradation generator
(blur plus quantization noise driven by a pseudo-QP) stands in for
codec output in desk-scale runs; it is a test fixture, not a codec.
"""

from __future__ import annotations

import configparser
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ClipTriplet, Frame, QPCode, encode_qp, make_triplet
from .errors import ConfigError, FormatError, InvalidInputError
from .validation import as_frame_sequence

__all__ = [
    "VideoSequence",
    "SequencePair",
    "TrainingSample",
    "read_sequence",
    "write_sequence",
    "parse_manifest",
    "write_manifest",
    "build_samples",
    "samples_from_arrays",
    "degrade_frame",
    "degrade_sequence",
    "synthetic_sequence",
    "synthetic_training_set",
]

_Y4M_MAGIC = b"YUV4MPEG2"
_CHROMA_FRACTION = {"420": 0.5, "420jpeg": 0.5, "420mpeg2": 0.5, "420paldv": 0.5, "mono": 0.0}


@dataclass
class VideoSequence(Sequence):
    """Luma frames plus opaque chroma and container metadata for
    bit-exact pass-through writing."""

    frames: list[Frame]
    width: int
    height: int
    pixel_format: str  # y4m colorspace tag like "420", or "mono"
    chroma: list[Optional[bytes]] = field(default_factory=list)
    y4m_header: Optional[bytes] = None
    frame_headers: list[bytes] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def with_frames(self, frames: Sequence[Frame]) -> "VideoSequence":
        """Same container metadata and chroma, new luma planes."""
        if len(frames) != len(self.frames):
            raise InvalidInputError(
                f"replacement has {len(frames)} frames, expected {len(self.frames)}"
            )
        return VideoSequence(
            frames=list(frames),
            width=self.width,
            height=self.height,
            pixel_format=self.pixel_format,
            chroma=list(self.chroma),
            y4m_header=self.y4m_header,
            frame_headers=list(self.frame_headers),
        )


def _chroma_bytes(pixel_format: str, width: int, height: int) -> int:
    if pixel_format not in _CHROMA_FRACTION:
        raise FormatError(f"unsupported colorspace C{pixel_format} (supported: "
                          f"{', '.join(sorted(_CHROMA_FRACTION))})")
    return int(width * height * 2 * _CHROMA_FRACTION[pixel_format])


def _read_y4m(path: Path) -> VideoSequence:
    data = path.read_bytes()
    if not data.startswith(_Y4M_MAGIC):
        raise FormatError(f"{path}: missing YUV4MPEG2 signature")
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: unterminated stream header")
    header = data[:nl]
    width = height = None
    colorspace = "420"
    for token in header.split(b" ")[1:]:
        if not token:
            continue
        tag, value = token[:1], token[1:].decode("ascii", "replace")
        if tag == b"W":
            width = int(value)
        elif tag == b"H":
            height = int(value)
        elif tag == b"C":
            colorspace = value
    if not width or not height:
        raise FormatError(f"{path}: header lacks W/H dimensions")
    chroma_size = _chroma_bytes(colorspace, width, height)
    luma_size = width * height

    frames, chroma, frame_headers = [], [], []
    pos = nl + 1
    index = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0 or not data[pos:nl].startswith(b"FRAME"):
            raise FormatError(f"{path}: bad frame marker at frame {index}")
        frame_headers.append(data[pos:nl])
        pos = nl + 1
        end = pos + luma_size + chroma_size
        if end > len(data):
            raise FormatError(f"{path}: truncated at frame {index}")
        y = np.frombuffer(data[pos:pos + luma_size], dtype=np.uint8)
        frames.append(Frame.from_uint8(y.reshape(height, width), index=index))
        chroma.append(data[pos + luma_size:end])
        pos = end
        index += 1
    return VideoSequence(frames=frames, width=width, height=height,
                         pixel_format=colorspace, chroma=chroma,
                         y4m_header=header, frame_headers=frame_headers)


def _read_raw(path: Path, pixel_format: str, width: int, height: int) -> VideoSequence:
    fraction = {"yuv420p": 0.5, "gray": 0.0}.get(pixel_format)
    if fraction is None:
        raise FormatError(f"unsupported raw format {pixel_format!r} "
                          f"(supported: yuv420p, gray)")
    data = path.read_bytes()
    luma_size = width * height
    chroma_size = int(luma_size * 2 * fraction)
    frame_size = luma_size + chroma_size
    if len(data) % frame_size != 0:
        raise FormatError(
            f"{path}: size {len(data)} is not a multiple of the "
            f"{frame_size}-byte frame for {width}x{height} {pixel_format}"
        )
    count = len(data) // frame_size
    frames, chroma = [], []
    for i in range(count):
        base = i * frame_size
        y = np.frombuffer(data[base:base + luma_size], dtype=np.uint8)
        frames.append(Frame.from_uint8(y.reshape(height, width), index=i))
        chroma.append(data[base + luma_size:base + frame_size] or None)
    return VideoSequence(frames=frames, width=width, height=height,
                         pixel_format="raw-" + pixel_format, chroma=chroma)


def read_sequence(path, pixel_format: Optional[str] = None,
                  width: Optional[int] = None,
                  height: Optional[int] = None) -> VideoSequence:
    """Read a video file.

    ``.y4m`` files are self-describing; raw planar files need
    ``pixel_format`` ("yuv420p" or "gray") plus dimensions.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    if pixel_format in (None, "y4m") and path.suffix.lower() == ".y4m":
        return _read_y4m(path)
    if pixel_format == "y4m":
        return _read_y4m(path)
    if pixel_format is None:
        raise FormatError(f"{path}: raw input needs an explicit pixel format")
    if not width or not height:
        raise FormatError(f"{path}: raw input needs explicit dimensions")
    return _read_raw(path, pixel_format, width, height)


def write_sequence(path, seq: VideoSequence) -> None:
    """Write a sequence back to disk.

    Y4M metadata and chroma pass through untouched, so reading and
    rewriting an unmodified sequence is bit-identical.
    """
    path = Path(path)
    out = bytearray()
    if path.suffix.lower() == ".y4m" or seq.y4m_header is not None:
        header = seq.y4m_header
        if header is None:
            header = b"YUV4MPEG2 W%d H%d F25:1 Ip A1:1 C420" % (seq.width, seq.height)
        out += header + b"\n"
        chroma_size = _chroma_bytes(
            seq.pixel_format if not seq.pixel_format.startswith("raw-") else "420",
            seq.width, seq.height)
        for i, frame in enumerate(seq.frames):
            marker = seq.frame_headers[i] if i < len(seq.frame_headers) else b"FRAME"
            out += marker + b"\n"
            out += frame.to_uint8().tobytes()
            c = seq.chroma[i] if i < len(seq.chroma) else None
            out += c if c is not None else b"\x80" * chroma_size
    else:
        for i, frame in enumerate(seq.frames):
            out += frame.to_uint8().tobytes()
            c = seq.chroma[i] if i < len(seq.chroma) else None
            if c:
                out += c
    path.write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# Sequence pairs and the manifest


@dataclass(frozen=True)
class SequencePair:
    """A raw sequence with its compressed versions, one per QP."""

    name: str
    raw_path: str
    compressed_path_per_qp: dict[int, str]
    width: Optional[int] = None
    height: Optional[int] = None
    pixel_format: Optional[str] = None  # None/"y4m" or raw format tag

    def read_raw(self) -> VideoSequence:
        return read_sequence(self.raw_path, self.pixel_format, self.width, self.height)

    def read_compressed(self, qp: int) -> VideoSequence:
        if qp not in self.compressed_path_per_qp:
            raise ConfigError(f"sequence {self.name!r} has no stream for QP {qp}")
        return read_sequence(self.compressed_path_per_qp[qp],
                             self.pixel_format, self.width, self.height)


def parse_manifest(path) -> list[SequencePair]:
    """Read the dataset manifest.

    The manifest is an INI-style text file with one ``[sequence:<name>]``
    section per entry::

        [sequence:foreman]
        raw = clips/foreman_raw.y4m
        qp22 = clips/foreman_qp22.y4m
        qp37 = clips/foreman_qp37.y4m
        # raw planar files additionally need:
        # format = yuv420p
        # width = 352
        # height = 288

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such manifest: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    base = path.parent
    pairs = []
    for section in parser.sections():
        if not section.startswith("sequence:"):
            raise ConfigError(f"{path}: unexpected section [{section}]")
        name = section.split(":", 1)[1]
        items = dict(parser.items(section))
        if "raw" not in items:
            raise ConfigError(f"{path}: [{section}] lacks a 'raw' entry")
        per_qp = {}
        for key, value in items.items():
            m = re.fullmatch(r"qp(\d+)", key)
            if m:
                per_qp[int(m.group(1))] = str(base / value)
        if not per_qp:
            raise ConfigError(f"{path}: [{section}] lists no qpNN streams")
        pairs.append(SequencePair(
            name=name,
            raw_path=str(base / items["raw"]),
            compressed_path_per_qp=per_qp,
            width=int(items["width"]) if "width" in items else None,
            height=int(items["height"]) if "height" in items else None,
            pixel_format=items.get("format"),
        ))
    if not pairs:
        raise ConfigError(f"{path}: manifest lists no sequences")
    return pairs


def write_manifest(path, pairs: Sequence[SequencePair]) -> None:
    lines = ["# vqenh dataset manifest", ""]
    for p in pairs:
        lines.append(f"[sequence:{p.name}]")
        lines.append(f"raw = {p.raw_path}")
        if p.pixel_format:
            lines.append(f"format = {p.pixel_format}")
        if p.width:
            lines.append(f"width = {p.width}")
        if p.height:
            lines.append(f"height = {p.height}")
        for qp in sorted(p.compressed_path_per_qp):
            lines.append(f"qp{qp} = {p.compressed_path_per_qp[qp]}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Training samples


@dataclass(frozen=True)
class TrainingSample:
    """Co-located compressed triplet and raw target crop at one QP."""

    compressed_triplet: ClipTriplet
    raw_target_crop: Frame
    qp: QPCode
    source_id: str
    crop_origin: tuple[int, int]


def _crop(frame: Frame, y: int, x: int, size: int) -> Frame:
    return Frame(frame.data[y:y + size, x:x + size], index=frame.index)


def build_samples(pairs: Sequence[SequencePair], qps: Sequence[int],
                  crop_size: int = 128, seed: int = 1234,
                  qp_vocabulary: Optional[Sequence[int]] = None) -> list[TrainingSample]:
    """All (sequence, target, crop, qp) combinations on the non-overlapping
    crop grid, shuffled with ``seed``.

    Frames contribute full crops only; remainders are discarded. Samples
    at all requested QPs are interleaved in a single pool. The one-hot
    codes are built over ``qp_vocabulary`` (default: the requested QPs).
    """
    vocab = tuple(sorted(qp_vocabulary if qp_vocabulary is not None else qps))
    codes = {qp: encode_qp(qp, vocab) for qp in qps}
    samples = []
    for pair in pairs:
        raw = pair.read_raw()
        for qp in qps:
            comp = pair.read_compressed(qp)
            if (comp.width, comp.height) != (raw.width, raw.height):
                raise FormatError(
                    f"sequence {pair.name!r} QP {qp}: dims "
                    f"{comp.width}x{comp.height} != raw {raw.width}x{raw.height}"
                )
            if len(comp) != len(raw):
                raise FormatError(
                    f"sequence {pair.name!r} QP {qp}: {len(comp)} frames != raw {len(raw)}"
                )
            for t in range(len(comp)):
                triplet = make_triplet(comp.frames, t)
                for y in range(0, raw.height - crop_size + 1, crop_size):
                    for x in range(0, raw.width - crop_size + 1, crop_size):
                        samples.append(TrainingSample(
                            compressed_triplet=ClipTriplet(
                                preceding=_crop(triplet.preceding, y, x, crop_size),
                                target=_crop(triplet.target, y, x, crop_size),
                                succeeding=_crop(triplet.succeeding, y, x, crop_size),
                            ),
                            raw_target_crop=_crop(raw.frames[t], y, x, crop_size),
                            qp=codes[qp],
                            source_id=pair.name,
                            crop_origin=(y, x),
                        ))
    random.Random(seed).shuffle(samples)
    return samples


def samples_from_arrays(clips: Sequence[tuple], crop_size: int = 128,
                        qp_vocabulary: Optional[Sequence[int]] = None,
                        seed: int = 1234) -> list[TrainingSample]:
    """Training samples from in-memory (compressed, raw, qp) clip triples.

    Each clip is a pair of aligned frame sequences (arrays or Frames);
    crops follow the same non-overlapping grid as :func:`build_samples`.
    """
    if not clips:
        raise InvalidInputError("no clips given")
    vocab = tuple(sorted(qp_vocabulary if qp_vocabulary is not None
                         else {int(qp) for _, _, qp in clips}))
    samples = []
    for ci, (compressed, raw, qp) in enumerate(clips):
        comp_frames = as_frame_sequence(compressed)
        raw_frames = as_frame_sequence(raw)
        if len(comp_frames) != len(raw_frames):
            raise InvalidInputError(
                f"clip {ci}: compressed has {len(comp_frames)} frames, "
                f"raw has {len(raw_frames)}"
            )
        if comp_frames[0].data.shape != raw_frames[0].data.shape:
            raise InvalidInputError(f"clip {ci}: compressed and raw dims differ")
        code = encode_qp(int(qp), vocab)
        h, w = comp_frames[0].data.shape
        crop = min(crop_size, h, w)
        for t in range(len(comp_frames)):
            triplet = make_triplet(comp_frames, t)
            for y in range(0, h - crop + 1, crop):
                for x in range(0, w - crop + 1, crop):
                    samples.append(TrainingSample(
                        compressed_triplet=ClipTriplet(
                            preceding=_crop(triplet.preceding, y, x, crop),
                            target=_crop(triplet.target, y, x, crop),
                            succeeding=_crop(triplet.succeeding, y, x, crop),
                        ),
                        raw_target_crop=_crop(raw_frames[t], y, x, crop),
                        qp=code,
                        source_id=f"clip-{ci}",
                        crop_origin=(y, x),
                    ))
    random.Random(seed).shuffle(samples)
    return samples


# ---------------------------------------------------------------------------
# Synthetic degradation (desk-scale stand-in for codec output)


def _separable_blur(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    pad = len(kernel) // 2
    out = np.pad(data, ((pad, pad), (0, 0)), mode="reflect")
    out = sum(out[i:i + data.shape[0], :] * kernel[i] for i in range(len(kernel)))
    out = np.pad(out, ((0, 0), (pad, pad)), mode="reflect")
    out = sum(out[:, i:i + data.shape[1]] * kernel[i] for i in range(len(kernel)))
    return out


def degrade_frame(frame: Frame, pseudo_qp: int, seed: int = 0) -> Frame:
    """Blur plus quantization noise scaled by a pseudo-QP.

    A labeled stand-in for codec output so desk-scale runs need no
    encoder; it is not equivalent to real codec degradation.
    """
    strength = max(pseudo_qp, 1) / 51.0  # HEVC QP range
    sigma = 0.4 + 1.2 * strength
    radius = 2
    xs = np.arange(-radius, radius + 1, dtype=np.float32)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    blurred = _separable_blur(frame.data.astype(np.float32), kernel)
    step = strength * 24.0 / 255.0
    quantized = np.round(blurred / step) * step
    rng = np.random.default_rng(seed * 7919 + frame.index)
    noise = rng.normal(0.0, step / 4.0, size=quantized.shape).astype(np.float32)
    return Frame(np.clip(quantized + noise, 0.0, 1.0), index=frame.index)


def degrade_sequence(frames: Sequence[Frame], pseudo_qp: int, seed: int = 0) -> list[Frame]:
    return [degrade_frame(f, pseudo_qp, seed=seed) for f in frames]


def synthetic_sequence(num_frames: int, height: int, width: int, seed: int = 0) -> list[Frame]:
    """Smooth drifting random content, useful as a raw-sequence fixture."""
    rng = np.random.default_rng(seed)
    base = rng.random((height + 8 * num_frames, width + 8 * num_frames)).astype(np.float32)
    kernel = np.ones(9, dtype=np.float32) / 9.0
    base = _separable_blur(base, kernel)
    base = (base - base.min()) / max(float(base.max() - base.min()), 1e-8)
    frames = []
    for t in range(num_frames):
        off = 4 * t
        frames.append(Frame(base[off:off + height, off:off + width].copy(), index=t))
    return frames


def synthetic_training_set(num_clips: int, frames_per_clip: int, size: int,
                           qps: Sequence[int], seed: int = 0,
                           crop_size: Optional[int] = None):
    """Build in-memory raw/degraded clip pairs and their training samples.

    Returns ``(samples, clips)`` where ``clips`` maps (clip index, qp) to
    the (raw frames, degraded frames) pair for evaluation use.
    """
    crop = crop_size or size
    vocab = tuple(sorted(qps))
    samples = []
    clips = {}
    for c in range(num_clips):
        raw = synthetic_sequence(frames_per_clip, size, size, seed=seed * 1000 + c)
        for qp in qps:
            degraded = degrade_sequence(raw, qp, seed=seed * 1000 + c)
            clips[(c, qp)] = (raw, degraded)
            for t in range(frames_per_clip):
                triplet = make_triplet(degraded, t)
                for y in range(0, size - crop + 1, crop):
                    for x in range(0, size - crop + 1, crop):
                        samples.append(TrainingSample(
                            compressed_triplet=ClipTriplet(
                                preceding=_crop(triplet.preceding, y, x, crop),
                                target=_crop(triplet.target, y, x, crop),
                                succeeding=_crop(triplet.succeeding, y, x, crop),
                            ),
                            raw_target_crop=_crop(raw[t], y, x, crop),
                            qp=encode_qp(qp, vocab),
                            source_id=f"synthetic-{c}",
                            crop_origin=(y, x),
                        ))
    random.Random(seed).shuffle(samples)
    return samples, clips
