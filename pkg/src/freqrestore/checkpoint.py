"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic    8 bytes  b"FRCKPT\\0\\0"
    version  uint32
    hlen     uint32   length of the JSON header
    header   hlen bytes UTF-8 JSON: {"model": hyperparameters, "config": {...},
                                     "manifest": [[name, shape], ...]}
    payload  float32 LE parameter values, in manifest order
    blen     uint32   length of the BinSpec blob (0 if absent)
    binspec  blen bytes, see freqlab.BinSpec.to_bytes
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import models
from .freqlab import BinSpec

MAGIC = b"FRCKPT\x00\x00"
VERSION = 1


def to_bytes(model, bins: BinSpec | None = None, config: dict | None = None) -> bytes:
    named = list(model.named_parameters())
    header = {
        "model": model.hyperparameters(),
        "config": config or {},
        "manifest": [[name, list(p.shape)] for name, p in named],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f4").tobytes() for _, p in named)
    blob = bins.to_bytes() if bins is not None else b""
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload + struct.pack("<I", len(blob)) + blob


def save_checkpoint(path, model, bins: BinSpec | None = None, config: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(model, bins, config))


def build_model(hp: dict):
    widths = models.Widths(stem=hp["stem"], n_f=hp["n_f"], stage=hp["stage"], slope=hp["slope"])
    rng = np.random.default_rng(0)
    if hp["kind"] == "classifier":
        return models.ClassifierModel(rng, widths, T=hp["T"], n_cl=hp["n_cl"], w_b=hp["w_b"], h_b=hp["h_b"])
    if hp["kind"] == "ced":
        return models.CEDModel(rng, widths, n_ch=hp["n_ch"], global_skip=hp["global_skip"])
    raise ValueError(f"unknown model kind {hp['kind']!r}")


def from_bytes(raw: bytes):
    """Returns ``(model, bins_or_None, config_dict)``."""
    if raw[:8] != MAGIC:
        raise ValueError("not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    model = build_model(header["model"])
    params = dict(model.named_parameters())
    pos = 16 + hlen
    for name, shape in header["manifest"]:
        if name not in params or list(params[name].shape) != shape:
            raise ValueError(f"checkpoint manifest entry {name} {shape} does not match the model")
        n = int(np.prod(shape)) * 4
        chunk = raw[pos : pos + n]
        if len(chunk) != n:
            raise ValueError("truncated checkpoint payload")
        params[name].data[...] = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        pos += n
    (blen,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    bins = BinSpec.from_bytes(raw[pos : pos + blen]) if blen else None
    return model, bins, header["config"]


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
