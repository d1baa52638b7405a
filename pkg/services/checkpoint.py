"""Policy checkpoint file, format `DPCK` version 1.

    bytes 0-3   magic b"DPCK"
    bytes 4-7   format version, uint32 little-endian
    bytes 8-11  header length L, uint32 little-endian
    next L      UTF-8 JSON header: {"network": NetworkConfig, "tensors": [{"name", "shape"}...],
                "dtype": "<f8", "state": {...training state...}}
    remainder   tensors in header order, raw little-endian float64, C order
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from models.data_models import NetworkConfig
from models.exceptions import CheckpointFormatError
from services.policy_network import PolicyWeights

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"DPCK"
VERSION = 1
DTYPE = "<f8"
_PREFIX = struct.Struct("<4sII")


def replay_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".replay.npz")


def save_checkpoint(path: PathLike, weights: PolicyWeights,
                    state: Optional[Dict[str, Any]] = None) -> None:
    header = {
        "network": weights.config.model_dump(mode="json"),
        "tensors": [{"name": name, "shape": list(array.shape)} for name, array in weights.items()],
        "dtype": DTYPE,
        "state": state or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_PREFIX.pack(MAGIC, VERSION, len(header_bytes)))
        handle.write(header_bytes)
        for _, array in weights.items():
            handle.write(np.ascontiguousarray(array, dtype=DTYPE).tobytes())
    logger.info("wrote checkpoint %s (%d parameters)", path, weights.parameter_count())


def load_checkpoint(path: PathLike) -> Tuple[PolicyWeights, Dict[str, Any]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: file too short")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
        config = NetworkConfig(**header["network"])
        entries = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("dtype") != DTYPE:
        raise CheckpointFormatError(f"{path}: unsupported dtype {header.get('dtype')}")

    offset = start + header_len
    tensors = {}
    for entry in entries:
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointFormatError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(data[offset:end], dtype=DTYPE).reshape(shape).astype(float)
        offset = end
    if offset != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - offset} trailing bytes")
    try:
        weights = PolicyWeights(config, tensors)
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from exc
    return weights, header.get("state", {})
