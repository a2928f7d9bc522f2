"""Binary checkpoint files for model parameters and optimizer state.

Layout (little-endian):
    magic "ACNCK", version u16,
    config blob: u32 length + UTF-8 JSON (sorted keys),
    parameter count u32, then per parameter:
        name (u16 length + UTF-8), ndim u8, dims u32..., float64 payload,
    optimizer flag u8; if 1:
        step_count u64, lr/beta1/beta2/eps f64,
        first/second moment float64 payloads in parameter order.

Round-trips are bit-exact: payloads are raw '<f8' bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tensor

MAGIC = b"ACNCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    data = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
    return data.reshape(shape)


def save_checkpoint(path, params: dict[str, Tensor], config: dict,
                    opt_state: AdamState | None = None) -> None:
    """Write parameters (in insertion order) plus embedded config."""
    path = Path(path)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            _write_array(fh, tensor.data)
        if opt_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", opt_state.step_count))
            fh.write(struct.pack("<4d", opt_state.lr, opt_state.beta1,
                                 opt_state.beta2, opt_state.eps))
            for name in params:
                _write_array(fh, opt_state.m[name])
                _write_array(fh, opt_state.v[name])


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict, AdamState | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(blob_len).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            params[name] = Tensor(_read_array(fh), requires_grad=True)
        (has_opt,) = struct.unpack("<B", fh.read(1))
        opt_state = None
        if has_opt:
            (step_count,) = struct.unpack("<Q", fh.read(8))
            lr, b1, b2, eps = struct.unpack("<4d", fh.read(32))
            opt_state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step_count=step_count)
            for name in params:
                opt_state.m[name] = _read_array(fh)
                opt_state.v[name] = _read_array(fh)
    return params, config, opt_state
