"""Sectioned binary checkpoint: magic, JSON header, named parameter blobs."""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import SchemaMismatch, ValidationError
from ..features import FeatureSchema
from .autograd import parameter
from .model import ModelConfig, TaoModel

MAGIC = b"TAONN1"


def blob_hash(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, np.float64).tobytes()).hexdigest()


def group_hash(params: dict) -> str:
    """Digest over a parameter group, in name order."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, np.float64).tobytes())
    return h.hexdigest()


def checkpoint_bytes(model: TaoModel, extra: dict | None = None) -> bytes:
    entries, blobs = [], []
    for name, t in sorted(model.parameters().items()):
        a = np.ascontiguousarray(t.data, np.float64)
        entries.append({"name": name, "group": model.group_of(name), "shape": list(a.shape),
                        "sha256": blob_hash(a)})
        blobs.append(a.tobytes())
    header = {
        "model": model.cfg.to_json(),
        "schema": model.schema.to_json(),
        "schema_hash": model.schema.hash(),
        "arch_id": model.arch_id,
        "shared_hash": group_hash(model.shared),
        "params": entries,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(blobs)


def save_checkpoint(model: TaoModel, path, extra: dict | None = None) -> str:
    data = checkpoint_bytes(model, extra)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path, expect_schema_hash: str | None = None) -> tuple[TaoModel, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MAGIC:
        raise ValidationError(f"{path}: not a model checkpoint (bad magic at offset 0)")
    (n,) = struct.unpack("<I", raw[6:10])
    header = json.loads(raw[10:10 + n])
    schema = FeatureSchema.from_json(header["schema"])
    if schema.hash() != header["schema_hash"]:
        raise ValidationError(f"{path}: schema hash does not match embedded schema")
    if expect_schema_hash is not None and header["schema_hash"] != expect_schema_hash:
        raise SchemaMismatch(f"{path}: checkpoint schema {header['schema_hash']} != {expect_schema_hash}")
    cfg = ModelConfig.from_json(header["model"])
    pos = 10 + n
    shared, arch = {}, {}
    for e in header["params"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        end = pos + 8 * count
        if end > len(raw):
            raise ValidationError(f"{path}: truncated blob {e['name']!r} at offset {pos}")
        a = np.frombuffer(raw[pos:end], np.float64).reshape(e["shape"]).copy()
        if blob_hash(a) != e["sha256"]:
            raise ValidationError(f"{path}: blob {e['name']!r} at offset {pos} fails its checksum")
        (shared if e["group"] == "shared" else arch)[e["name"]] = parameter(a, e["name"])
        pos = end
    model = TaoModel(cfg, schema, shared=shared, arch=arch, arch_id=header["arch_id"])
    return model, header
