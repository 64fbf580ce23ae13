"""Versioned checkpoint container.

Layout: 4 magic bytes, a little-endian uint32 format version, a
little-endian uint64 header length, a UTF-8 JSON header (config
snapshot, user metadata, and a manifest of block names/shapes/dtypes/
offsets), then the raw little-endian block payload. Parameter blocks
are 32-bit floats; integer bookkeeping buffers are tagged ``i8``.

The frozen backbone is not serialized: it is reconstructed from the
embedded config (the test stub deterministically, the pretrained
backbone from its weight file).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .core import ModelConfig, config_from_dict, config_to_dict
from .discriminator import PatchDiscriminator
from .errors import FormatError
from .pipeline import Generator, build_generator

__all__ = ["save_checkpoint", "load_checkpoint", "read_checkpoint_meta",
           "build_discriminator"]

MAGIC = b"VQEC"
VERSION = 1

_DTYPES = {"f4": np.dtype("<f4"), "i8": np.dtype("<i8")}


def build_discriminator(config: ModelConfig) -> PatchDiscriminator:
    with torch.random.fork_rng():
        torch.manual_seed(config.seed + 1)
        return PatchDiscriminator(
            in_channels=2 if config.disc_conditional else 1,
            widths=config.disc_widths,
            strides=config.disc_strides,
            kernel=config.disc_kernel,
            norm=config.disc_norm,
        )


def _collect_blocks(generator: Generator,
                    discriminator: Optional[PatchDiscriminator]) -> dict[str, np.ndarray]:
    blocks = {}
    for name, tensor in generator.state_dict().items():
        if name.startswith("backbone."):
            continue
        blocks[f"generator/{name}"] = tensor.detach().cpu().numpy()
    if discriminator is not None:
        for name, tensor in discriminator.state_dict().items():
            blocks[f"discriminator/{name}"] = tensor.detach().cpu().numpy()
    return blocks


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.int64:
        return "i8"
    raise FormatError(f"unsupported block dtype {arr.dtype}")


def save_checkpoint(path, generator: Generator,
                    discriminator: Optional[PatchDiscriminator] = None,
                    meta: Optional[dict] = None) -> None:
    blocks = _collect_blocks(generator, discriminator)
    manifest = []
    offset = 0
    payload = bytearray()
    for name in sorted(blocks):
        arr = blocks[name]
        tag = _dtype_tag(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": tag,
            "offset": offset,
        })
        payload += raw
        offset += len(raw)
    header = {
        "config": config_to_dict(generator.config)["model"],
        "meta": meta or {},
        "has_discriminator": discriminator is not None,
        "blocks": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _read(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    return header, data[16 + hlen:]


def read_checkpoint_meta(path) -> dict:
    header, _ = _read(path)
    return header


def load_checkpoint(path) -> tuple[Generator, Optional[PatchDiscriminator], dict]:
    """Rebuild the models recorded in a checkpoint.

    Raises :class:`FormatError` when block names or shapes disagree with
    the model built from the embedded config snapshot.
    """
    header, payload = _read(path)
    config, _ = config_from_dict({"model": header["config"]})
    generator = build_generator(config)
    discriminator = build_discriminator(config) if header["has_discriminator"] else None

    tensors = {"generator": {}, "discriminator": {}}
    for entry in header["blocks"]:
        tag = entry["dtype"]
        dtype = _DTYPES.get(tag)
        if dtype is None:
            raise FormatError(f"{path}: unknown block dtype {tag!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        raw = payload[start:start + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated block {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        family, name = entry["name"].split("/", 1)
        tensors[family][name] = torch.from_numpy(arr)

    gen_state = generator.state_dict()
    for name, tensor in tensors["generator"].items():
        if name not in gen_state:
            raise FormatError(f"{path}: unexpected generator block {name!r}")
        if tuple(gen_state[name].shape) != tuple(tensor.shape):
            raise FormatError(
                f"{path}: generator block {name!r} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(gen_state[name].shape)}"
            )
        gen_state[name] = tensor.to(gen_state[name].dtype)
    generator.load_state_dict(gen_state)

    if discriminator is not None:
        disc_state = discriminator.state_dict()
        for name, tensor in tensors["discriminator"].items():
            if name not in disc_state:
                raise FormatError(f"{path}: unexpected discriminator block {name!r}")
            disc_state[name] = tensor.to(disc_state[name].dtype)
        discriminator.load_state_dict(disc_state)

    return generator, discriminator, header["meta"]
