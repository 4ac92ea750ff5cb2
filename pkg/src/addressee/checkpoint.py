"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic        8 bytes   b"ARVSUCKP"
    version      uint32
    header_len   uint32
    header       header_len bytes of UTF-8 JSON: config, config digest,
                 metadata, and the tensor table [[name, shape], ...]
    tensors      float64 values of every table entry, in table order
    checksum     32 bytes  SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, init_params
from .tensor import make_rng

MAGIC = b"ARVSUCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DIGEST_LEN = 32


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def to_params(self) -> ModelParams:
        params = init_params(self.config, make_rng(0))
        params.load_arrays(self.tensors)
        return params

    @classmethod
    def from_params(cls, cfg: ModelConfig, params: ModelParams, metadata: dict | None = None) -> "Checkpoint":
        return cls(config=cfg, tensors=params.state_arrays(), metadata=dict(metadata or {}))


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    table = [[name, list(arr.shape)] for name, arr in ckpt.tensors.items()]
    header = {
        "config": ckpt.config.to_dict(),
        "config_digest": ckpt.config.digest(),
        "metadata": ckpt.metadata,
        "tensors": table,
    }
    header_blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, ckpt.version, len(header_blob)), header_blob]
    for arr in ckpt.tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def _parse_header(blob: bytes, path) -> tuple[dict, int]:
    _, _, header_len = _PREFIX.unpack_from(blob)
    end = _PREFIX.size + header_len
    if len(blob) < end:
        raise TruncatedCheckpointError(f"{path}: header extends past end of file")
    header = json.loads(blob[_PREFIX.size:end].decode("utf-8"))
    return header, end


def load_checkpoint(path: str | Path, expected_config: ModelConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint.

    Raises :class:`VersionMismatchError`, :class:`TruncatedCheckpointError`,
    :class:`ChecksumError` or :class:`ConfigMismatchError` (when
    ``expected_config`` is given and its digest differs from the stored one).
    """
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise TruncatedCheckpointError(f"{path}: {len(blob)} bytes is shorter than the fixed prefix")
    magic, version, _ = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")

    body, stored = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:]
    if len(blob) < _PREFIX.size + _DIGEST_LEN or hashlib.sha256(body).digest() != stored:
        # distinguish a short file from a damaged one when the header still parses
        try:
            header, end = _parse_header(blob, path)
            n_values = sum(int(np.prod(shape)) for _, shape in header["tensors"])
            if len(blob) < end + 8 * n_values + _DIGEST_LEN:
                raise TruncatedCheckpointError(f"{path}: file is shorter than its tensor table requires")
        except TruncatedCheckpointError:
            raise
        except Exception:
            pass
        raise ChecksumError(f"{path}: SHA-256 checksum mismatch")

    header, offset = _parse_header(body, path)
    config = ModelConfig.from_dict(header["config"])
    if config.digest() != header["config_digest"]:
        raise ChecksumError(f"{path}: stored config digest does not match stored config")
    if expected_config is not None and expected_config.digest() != header["config_digest"]:
        raise ConfigMismatchError(
            f"{path}: checkpoint config {header['config_digest'][:12]} != expected {expected_config.digest()[:12]}"
        )
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        tensors[name] = arr
        offset += 8 * n
    if offset != len(body):
        raise ChecksumError(f"{path}: {len(body) - offset} unexpected trailing bytes")
    return Checkpoint(config=config, tensors=tensors, metadata=header["metadata"], version=version)
