"""Checkpoint directory layout.

  config.json    the ModelConfig
  weights.bin    named tensor records, little-endian float32
  optimizer.bin  Adam step count plus first/second moment records (optional)

Record format, repeated until EOF:
  u32 name length | name utf-8 | u32 ndim | u32 dims... | float32 LE payload

Tensors are written in param_shapes order, so two checkpoints of the same
training run are byte-identical.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from genir.errors import DataError
from genir.model.config import ModelConfig, param_shapes
from genir.model.net import ModelParams
from genir.model.optim import AdamState

WEIGHTS = "weights.bin"
OPTIMIZER = "optimizer.bin"
CONFIG = "config.json"


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_records(fh, path: str):
    while True:
        head = fh.read(4)
        if not head:
            return
        if len(head) != 4:
            raise DataError(f"{path}: truncated record header")
        (name_len,) = struct.unpack("<I", head)
        name = fh.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise DataError(f"{path}: truncated payload for {name!r}")
        yield name, np.frombuffer(payload, dtype="<f4").reshape(shape)


def save_checkpoint(ckpt_dir: str, params: ModelParams, opt: AdamState | None = None) -> None:
    os.makedirs(ckpt_dir, exist_ok=True)
    with open(os.path.join(ckpt_dir, CONFIG), "w", encoding="utf-8") as fh:
        fh.write(params.config.to_json())
    with open(os.path.join(ckpt_dir, WEIGHTS), "wb") as fh:
        for name in param_shapes(params.config):
            _write_record(fh, name, params.tensors[name])
    if opt is not None:
        with open(os.path.join(ckpt_dir, OPTIMIZER), "wb") as fh:
            fh.write(struct.pack("<q", opt.step))
            for name in param_shapes(params.config):
                _write_record(fh, f"m.{name}", opt.m[name])
            for name in param_shapes(params.config):
                _write_record(fh, f"v.{name}", opt.v[name])


def load_checkpoint(ckpt_dir: str, dtype=np.float32):
    """Returns (params, opt) where opt is None if no optimizer state exists."""
    with open(os.path.join(ckpt_dir, CONFIG), encoding="utf-8") as fh:
        cfg = ModelConfig.from_json(fh.read())
    expected = param_shapes(cfg)
    tensors: dict[str, np.ndarray] = {}
    weights_path = os.path.join(ckpt_dir, WEIGHTS)
    with open(weights_path, "rb") as fh:
        for name, arr in _read_records(fh, weights_path):
            if name not in expected:
                raise DataError(f"{weights_path}: unexpected tensor {name!r}")
            if tuple(arr.shape) != expected[name]:
                raise DataError(
                    f"{weights_path}: {name!r} has shape {arr.shape}, expected {expected[name]}"
                )
            tensors[name] = arr.astype(dtype)
    missing = set(expected) - set(tensors)
    if missing:
        raise DataError(f"{weights_path}: missing tensors {sorted(missing)}")
    params = ModelParams(config=cfg, tensors=tensors)

    opt_path = os.path.join(ckpt_dir, OPTIMIZER)
    if not os.path.exists(opt_path):
        return params, None
    with open(opt_path, "rb") as fh:
        (step,) = struct.unpack("<q", fh.read(8))
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name, arr in _read_records(fh, opt_path):
            if name.startswith("m."):
                m[name[2:]] = arr.astype(dtype)
            elif name.startswith("v."):
                v[name[2:]] = arr.astype(dtype)
            else:
                raise DataError(f"{opt_path}: unexpected record {name!r}")
    if set(m) != set(expected) or set(v) != set(expected):
        raise DataError(f"{opt_path}: incomplete optimizer state")
    return params, AdamState(step=step, m=m, v=v)
