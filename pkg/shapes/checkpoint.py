"""
Checkpoint format for named float64 arrays (all integers little-endian):

    magic "ACTGCKPT" | version u16
    meta_len u32 | metadata JSON (utf-8)        architecture, kind, extras
    count u32
    count x ( name_len u16 | name utf-8 | ndim u8 | dims u32[ndim] )
    count x ( f64 values, row-major, in table order )
    crc32 u32 over every preceding byte
"""

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from classifier.model import ClassifierArch, ConvClassifier
from diffusion.denoiser import ConditionalDenoiser, DenoiserArch
from numerics.tensor import Tensor
from shared.errors import CheckpointError

MAGIC = b"ACTGCKPT"
VERSION = 1

Arrays = Dict[str, np.ndarray]


def encode_checkpoint(arrays: Arrays, meta: Dict[str, Any]) -> bytes:
    meta_json = json.dumps(meta, sort_keys=True).encode("utf-8")
    names = list(arrays)
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(meta_json)), meta_json]
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        shape = np.shape(arrays[name])
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
    for name in names:
        parts.append(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> Tuple[Arrays, Dict[str, Any]]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 18:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted)")
    try:
        (version,) = struct.unpack_from("<H", body, 8)
        if version != VERSION:
            raise CheckpointError(f"checkpoint version {version} not supported (expected {VERSION})")
        (meta_len,) = struct.unpack_from("<I", body, 10)
        offset = 14
        meta = json.loads(body[offset : offset + meta_len].decode("utf-8"))
        offset += meta_len
        (count,) = struct.unpack_from("<I", body, offset)
        offset += 4
        table = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", body, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", body, offset)
            offset += 4 * ndim
            table.append((name, shape))
        arrays: Arrays = {}
        for name, shape in table:
            n = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * n
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if offset != len(body):
        raise CheckpointError(f"{len(body) - offset} unexpected trailing bytes")
    return arrays, meta


def save_checkpoint(path: Union[str, Path], arrays: Arrays, meta: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(arrays, meta))
    tmp.replace(path)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Arrays, Dict[str, Any]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(blob)


def _expect_kind(meta: Dict[str, Any], kind: str, path) -> None:
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {meta.get('kind')!r} checkpoint, expected {kind!r}")


def save_denoiser(path: Union[str, Path], model: ConditionalDenoiser) -> None:
    arrays = {k: v.data for k, v in model.params.items()}
    save_checkpoint(path, arrays, {"kind": "denoiser", "arch": model.arch.model_dump()})


def load_denoiser(path: Union[str, Path]) -> ConditionalDenoiser:
    arrays, meta = load_checkpoint(path)
    _expect_kind(meta, "denoiser", path)
    return ConditionalDenoiser({k: Tensor(v) for k, v in arrays.items()}, DenoiserArch(**meta["arch"]))


def save_classifier(path: Union[str, Path], model: ConvClassifier, extra: Dict[str, Any] = None) -> None:
    arrays = {k: v.data for k, v in model.params.items()}
    save_checkpoint(path, arrays, {"kind": "classifier", "arch": model.arch.model_dump(), **(extra or {})})


def load_classifier(path: Union[str, Path]) -> ConvClassifier:
    arrays, meta = load_checkpoint(path)
    _expect_kind(meta, "classifier", path)
    return ConvClassifier({k: Tensor(v) for k, v in arrays.items()}, ClassifierArch(**meta["arch"]))
