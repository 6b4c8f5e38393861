"""
Checkpoint files

Layout:
    PUSHRL-CHECKPOINT 1
    layout_hash <sha256 hex>
    metadata <one-line JSON>
    tensor <name> <d0,d1,...> <offset> <count>      (one line per tensor)
    end_header
    <little-endian float32 values, tensors back to back>

Offsets and counts are in float32 elements from the start of the data block.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import CheckpointMismatchError
from .nn import ParamStore
from .state_obs import LAYOUT_SIGNATURE

logger = logging.getLogger(__name__)

MAGIC = "PUSHRL-CHECKPOINT"
FORMAT_VERSION = 1
_END = b"end_header\n"


def layout_hash(network_signature: str) -> str:
    """Hash of the observation/privileged/key-point layouts plus the network shapes"""
    return hashlib.sha256(f"{LAYOUT_SIGNATURE}|{network_signature}".encode("utf-8")).hexdigest()


def save(path, params: ParamStore, network_signature: str, metadata: Optional[Dict] = None) -> Path:
    """Write params in float32 with a text header; returns the path written"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"layout_hash {layout_hash(network_signature)}",
        f"metadata {json.dumps(metadata or {}, sort_keys=True)}",
    ]
    chunks = []
    offset = 0
    for name in sorted(params):
        tensor = params[name]
        if " " in name:
            raise ValueError(f"Parameter names may not contain spaces: {name!r}")
        shape = ",".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {shape} {offset} {tensor.size}")
        chunks.append(np.ascontiguousarray(tensor, dtype="<f4").reshape(-1))
        offset += tensor.size

    header = ("\n".join(lines) + "\n").encode("utf-8") + _END
    data = np.concatenate(chunks).tobytes() if chunks else b""
    path.write_bytes(header + data)
    logger.info(f"✓ Checkpoint written: {path} ({len(params)} tensors, {offset} values)")
    return path


def read_header(path) -> Tuple[str, Dict, Dict[str, Tuple[Tuple[int, ...], int, int]], bytes]:
    raw = Path(path).read_bytes()
    end = raw.find(_END)
    if end < 0:
        raise CheckpointMismatchError(f"{path}: missing end_header")
    lines = raw[:end].decode("utf-8").splitlines()
    if not lines or lines[0] != f"{MAGIC} {FORMAT_VERSION}":
        raise CheckpointMismatchError(f"{path}: unsupported format line {lines[:1]}")

    stored_hash, metadata, manifest = "", {}, {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "layout_hash":
            stored_hash = rest.strip()
        elif key == "metadata":
            metadata = json.loads(rest)
        elif key == "tensor":
            name, shape, offset, count = rest.split(" ")
            dims = tuple(int(d) for d in shape.split(",") if d != "")
            manifest[name] = (dims, int(offset), int(count))
        else:
            raise CheckpointMismatchError(f"{path}: unknown header line {line!r}")
    return stored_hash, metadata, manifest, raw[end + len(_END):]


def load(path, network_signature: Optional[str] = None) -> Tuple[ParamStore, Dict]:
    """
    Read a checkpoint

    Args:
        path: Checkpoint file
        network_signature: When given, the stored layout hash must match it

    Returns:
        (params as float64, metadata)
    """
    stored_hash, metadata, manifest, data = read_header(path)
    if network_signature is not None and stored_hash != layout_hash(network_signature):
        logger.warning(f"✗ Checkpoint layout mismatch: {path}")
        raise CheckpointMismatchError(f"{path}: layout hash does not match the running code")

    values = np.frombuffer(data, dtype="<f4")
    params = ParamStore()
    for name, (shape, offset, count) in manifest.items():
        if offset + count > values.size or int(np.prod(shape, dtype=np.int64)) != count:
            raise CheckpointMismatchError(f"{path}: tensor {name} out of range")
        params.add(name, values[offset:offset + count].astype(np.float64).reshape(shape))
    return params, metadata
