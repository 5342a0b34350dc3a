"""
Binary model files

Layout: magic ``CRKNET1\\n`` | uint32 LE header length N | N bytes UTF-8 JSON header
(format version, network spec, tensor manifest) | tensors as LE float32 in manifest
order | uint32 LE CRC32 of everything before it.
"""

import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from models.network import NetworkParams, NetworkSpec
from utils.errors import ChecksumError, DataIOError, MagicError, TruncationError, VersionError

logger = logging.getLogger("model_io")

MAGIC = b"CRKNET1\n"
FORMAT_VERSION = 1
_TENSOR_DTYPE = np.dtype("<f4")


def encode_params(spec: NetworkSpec, params: NetworkParams) -> bytes:
    manifest = []
    offset = 0
    blobs = []
    for (layer, name), tensor in params.items():
        blob = np.ascontiguousarray(tensor, dtype=_TENSOR_DTYPE).tobytes()
        manifest.append({"layer": layer, "name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "spec": json.loads(spec.json()), "tensors": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_params(data: bytes, source: str = "<bytes>") -> Tuple[NetworkSpec, NetworkParams]:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise MagicError(f"{source}: not a model file (bad magic bytes)")
    cursor = len(MAGIC)
    if len(data) < cursor + 4:
        raise TruncationError(f"{source}: header length missing", expected=cursor + 4, actual=len(data))
    (header_len,) = struct.unpack_from("<I", data, cursor)
    cursor += 4
    if len(data) < cursor + header_len:
        raise TruncationError(f"{source}: header truncated", expected=cursor + header_len, actual=len(data))
    try:
        header = json.loads(data[cursor:cursor + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataIOError(f"{source}: unreadable model header: {e}") from e
    cursor += header_len

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{source}: model format version {version} is not supported (expected {FORMAT_VERSION})")

    payload_len = sum(int(np.prod(t["shape"], dtype=np.int64)) * _TENSOR_DTYPE.itemsize for t in header["tensors"])
    expected = cursor + payload_len + 4
    if len(data) < expected:
        raise TruncationError(f"{source}: model file truncated", expected=expected, actual=len(data))

    (stored_crc,) = struct.unpack_from("<I", data, cursor + payload_len)
    actual_crc = zlib.crc32(data[: cursor + payload_len]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(f"{source}: checksum mismatch (stored {stored_crc:08x}, computed {actual_crc:08x})")

    spec = NetworkSpec.build(header["spec"])
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = cursor + entry["offset"]
        tensors[(entry["layer"], entry["name"])] = (
            np.frombuffer(data, dtype=_TENSOR_DTYPE, count=count, offset=start)
            .reshape(entry["shape"])
            .astype(np.float32)
        )
    params = NetworkParams(tensors)
    expected_shapes = spec.parameter_shapes()
    if {key: tuple(t.shape) for key, t in params.items()} != expected_shapes:
        raise DataIOError(f"{source}: tensor manifest does not match the network layout")
    return spec, params


def save_params(spec: NetworkSpec, params: NetworkParams, path: Union[str, Path]) -> Path:
    """
    Write a model file; the bytes go to a sibling ``.partial`` file that is then renamed over ``path``

    Args:
        spec: Network layout stored in the header
        params: Tensors, written as little-endian float32
        path: Target file

    Returns:
        The written path
    """
    path = Path(path)
    partial = path.with_name(path.name + ".partial")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        partial.write_bytes(encode_params(spec, params))
        os.replace(partial, path)
    except OSError as e:
        partial.unlink(missing_ok=True)
        raise DataIOError(f"Cannot write model file {path}: {e}") from e
    logger.debug(f"Saved {params.parameter_count()} parameters to {path}")
    return path


def load_params(path: Union[str, Path]) -> Tuple[NetworkSpec, NetworkParams]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataIOError(f"Cannot read model file {path}: {e}") from e
    return decode_params(data, str(path))
