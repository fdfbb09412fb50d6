"""Checkpoint container: magic "DPBL", version, JSON header, f32 payloads.

Layout::

    bytes 0..3   magic b"DPBL"
    bytes 4..7   format version, uint32 little-endian (currently 1)
    bytes 8..11  header length in bytes, uint32 little-endian
    header       UTF-8 JSON: {"kind", "config", "arrays": [{name, shape}...],
                 "extra"}
    payload      raw little-endian IEEE-754 float32, arrays in header order

The header JSON is serialized with sorted keys and no whitespace, so
save -> load -> save is byte-identical.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import FormatError
from .model import Model, ModelConfig, build_model, named_state_arrays

MAGIC = b"DPBL"
VERSION = 1


def _config_dict(cfg):
    return {
        "hypercolumn": cfg.hypercolumn,
        "input_channels": cfg.input_channels,
        "scaling_factor": cfg.scaling_factor,
        "bn_epsilon": cfg.bn_epsilon,
        "bn_momentum": cfg.bn_momentum,
        "norm_offset": cfg.norm_offset,
        "norm_scale": cfg.norm_scale,
    }


def _config_from_dict(d):
    return ModelConfig(**d)


def write_container(path, kind, config, arrays, extra=None):
    """Write named float32 arrays atomically (no partial file on failure)."""
    header = {
        "kind": kind,
        "config": _config_dict(config),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(np.uint32(VERSION).tobytes())
            f.write(np.uint32(len(blob)).tobytes())
            f.write(blob)
            for _, arr in arrays:
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path):
    """Parse a container; returns (kind, config, arrays dict, extra)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    if len(data) < 12:
        raise FormatError("file truncated before header length", len(data))
    version = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    hlen = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    if len(data) < 12 + hlen:
        raise FormatError("file truncated inside header", len(data))
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid JSON: {e}", 12) from e
    arrays = {}
    offset = 12 + hlen
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        if len(data) < offset + nbytes:
            raise FormatError(
                f"payload truncated in array {entry['name']!r}", len(data))
        arrays[entry["name"]] = np.frombuffer(
            data, dtype="<f4", count=int(np.prod(shape)), offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after payload",
                          offset)
    return header["kind"], _config_from_dict(header["config"]), arrays, \
        header.get("extra", {})


def save_checkpoint(model, path, extra=None):
    write_container(path, "model", model.config, named_state_arrays(model),
                    extra=extra)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint, bit-exactly."""
    kind, config, arrays, _ = read_container(path)
    if kind != "model":
        raise FormatError(f"expected a model checkpoint, found kind {kind!r}",
                          12)
    model = build_model(config, seed=0)
    expected = dict(named_state_arrays(model))
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        surplus = sorted(set(arrays) - set(expected))
        raise FormatError(
            f"array names do not match the architecture "
            f"(missing {missing}, unexpected {surplus})", 12)
    for name, target in named_state_arrays(model):
        src = arrays[name]
        if src.shape != target.shape:
            raise FormatError(
                f"array {name!r} has shape {src.shape}, expected "
                f"{target.shape}", 12)
        target[:] = src
    return model


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
