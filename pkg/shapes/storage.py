"""
Dataset file format (all integers little-endian):

    header   magic "ACTGDSET" | version u16 | flags u16 | payload_len u64 | crc32(payload) u32
    payload  spec_len u32 | spec JSON (utf-8)
             count u32 | channels u16 | height u16 | width u16
             count x ( label u32 | image f64[C*H*W] | mask u8[H*W] )

Decoding checks magic, then version, then length, then checksum, and builds
nothing before all four pass.
"""

import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np

from shapes.dataset import ShapeDataset
from shared.config import ShapeDatasetSpec
from shared.errors import DatasetChecksumError, DatasetFormatError, DatasetTruncatedError, DatasetVersionError

MAGIC = b"ACTGDSET"
VERSION = 1
_HEADER = struct.Struct("<8sHHQI")
_DIMS = struct.Struct("<IHHH")


def encode_dataset(dataset: ShapeDataset) -> bytes:
    spec_json = dataset.spec.model_dump_json().encode("utf-8")
    n = len(dataset)
    c, h, w = dataset.images.shape[1:] if n else (dataset.spec.channels, dataset.spec.image_size, dataset.spec.image_size)
    parts = [struct.pack("<I", len(spec_json)), spec_json, _DIMS.pack(n, c, h, w)]
    for i in range(n):
        parts.append(struct.pack("<I", int(dataset.labels[i])))
        parts.append(np.ascontiguousarray(dataset.images[i], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(dataset.masks[i, 0] > 0.5, dtype=np.uint8).tobytes())
    payload = b"".join(parts)
    return _HEADER.pack(MAGIC, VERSION, 0, len(payload), zlib.crc32(payload)) + payload


def decode_dataset(blob: bytes) -> ShapeDataset:
    head = blob[: len(MAGIC)]
    if head != MAGIC[: len(head)]:
        raise DatasetFormatError("not a dataset file (bad magic)")
    if len(blob) < _HEADER.size:
        raise DatasetTruncatedError(f"header needs {_HEADER.size} bytes, file has {len(blob)}")
    _, version, _flags, payload_len, crc = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise DatasetVersionError(f"dataset version {version} not supported (expected {VERSION})")
    payload = blob[_HEADER.size :]
    if len(payload) < payload_len:
        raise DatasetTruncatedError(f"payload has {len(payload)} of {payload_len} bytes")
    payload = payload[:payload_len]
    if zlib.crc32(payload) != crc:
        raise DatasetChecksumError("dataset checksum mismatch")

    try:
        (spec_len,) = struct.unpack_from("<I", payload, 0)
        offset = 4
        spec = ShapeDatasetSpec.model_validate_json(payload[offset : offset + spec_len].decode("utf-8"))
        offset += spec_len
        n, c, h, w = _DIMS.unpack_from(payload, offset)
        offset += _DIMS.size
        images = np.zeros((n, c, h, w))
        masks = np.zeros((n, 1, h, w))
        labels = np.zeros(n, dtype=np.int64)
        img_bytes, mask_bytes = 8 * c * h * w, h * w
        for i in range(n):
            (labels[i],) = struct.unpack_from("<I", payload, offset)
            offset += 4
            images[i] = np.frombuffer(payload, dtype="<f8", count=c * h * w, offset=offset).reshape(c, h, w)
            offset += img_bytes
            masks[i, 0] = np.frombuffer(payload, dtype=np.uint8, count=h * w, offset=offset).reshape(h, w)
            offset += mask_bytes
    except (struct.error, ValueError) as exc:
        raise DatasetFormatError(f"malformed dataset payload: {exc}") from None
    if offset != payload_len:
        raise DatasetFormatError(f"{payload_len - offset} trailing payload bytes")
    return ShapeDataset(spec, images, labels, masks)


def save_dataset(dataset: ShapeDataset, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_dataset(dataset))
    tmp.replace(path)


def load_dataset(path: Union[str, Path]) -> ShapeDataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read dataset {path}: {exc.strerror}") from None
    return decode_dataset(blob)
