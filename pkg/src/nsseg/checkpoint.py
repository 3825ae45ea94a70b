"""TinyFCN checkpoint files (NSC1).

Layout (little-endian): magic ``NSC1``; uint32 layer count; float32 leaky
slope; per layer uint32 (out_ch, in_ch, kh, kw); then every layer's kernel
followed by its bias as float32; then a uint32 byte length and the UTF-8 JSON
of the TrainConfig used (``{}`` if none).
"""
import hashlib
import json
import struct

import numpy as np

from .errors import FormatError, StorageError
from .model import TinyFCN

MAGIC = b"NSC1"
_F32 = np.dtype("<f4")


def encode_checkpoint(model, train_config=None):
    parts = [MAGIC, struct.pack("<If", len(model.weights), model.slope)]
    for w in model.weights:
        parts.append(struct.pack("<4I", *w.shape))
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype=_F32).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=_F32).tobytes())
    cfg = {} if train_config is None else train_config.to_dict()
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, data, name):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.name}: truncated while reading {what}", offset=len(self.data))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def decode_checkpoint(data, name="<bytes>"):
    """Return ``(model, train_config_dict)``; raises FormatError on any defect."""
    r = _Reader(data, name)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{name}: bad magic", offset=0)
    n_layers, slope = struct.unpack("<If", r.take(8, "header"))
    if n_layers < 1 or n_layers > 1024:
        raise FormatError(f"{name}: implausible layer count {n_layers}", offset=4)
    shapes = [struct.unpack("<4I", r.take(16, "layer shape")) for _ in range(n_layers)]
    weights, biases = [], []
    for shape in shapes:
        n = int(np.prod(shape))
        w = np.frombuffer(r.take(4 * n, "kernel"), dtype=_F32).reshape(shape).astype(np.float32)
        b = np.frombuffer(r.take(4 * shape[0], "bias"), dtype=_F32).astype(np.float32)
        weights.append(w)
        biases.append(b)
    (n_cfg,) = struct.unpack("<I", r.take(4, "config length"))
    blob = r.take(n_cfg, "config")
    if r.pos != len(data):
        raise FormatError(f"{name}: trailing bytes", offset=r.pos)
    try:
        cfg = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{name}: unreadable config ({exc})", offset=r.pos - n_cfg) from exc
    try:
        model = TinyFCN(weights, biases, slope=float(np.float32(slope)))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}", offset=8) from exc
    return model, cfg


def save_checkpoint(model, path, train_config=None):
    data = encode_checkpoint(model, train_config)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    return checkpoint_id(data)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, name=str(path))[0]


def checkpoint_id(data):
    return hashlib.sha256(data).hexdigest()[:16]


def file_checkpoint_id(path):
    with open(path, "rb") as fh:
        return checkpoint_id(fh.read())
