"""Binary checkpoint format.

Layout (all integers little-endian):

    magic           8 bytes  b"GRDNCKPT"
    version         u32
    fingerprint     u32 length + utf-8 (hash of the canonical config text)
    config echo     u64 length + utf-8 (the config file verbatim)
    iteration       u64
    flags           u8  (bit 0: optimizer state present)
    model tensors   u32 count, then records
    opt tensors     u32 count + records, only when flagged

A tensor record is: u16 name length + utf-8 name, u8 dtype code, u8 ndim,
u32 dims, then the raw little-endian values. Round-trips are bit-exact.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"GRDNCKPT"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8"}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.int64): 2}


def config_fingerprint(config_text: str) -> str:
    """Hash of the canonical form: sorted sections, sorted ``key = value`` lines."""
    return hashlib.sha256(canonical_config_text(config_text).encode()).hexdigest()


def canonical_config_text(config_text: str) -> str:
    sections: dict[str, dict[str, str]] = {}
    current = ""
    for raw in config_text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
        elif "=" in line:
            key, value = line.split("=", 1)
            sections.setdefault(current, {})[key.strip().lower()] = value.strip()
    out = []
    for name in sorted(sections):
        out.append(f"[{name}]")
        for key in sorted(sections[name]):
            out.append(f"{key} = {sections[name][key]}")
    return "\n".join(out) + "\n"


@dataclass
class Checkpoint:
    tensors: dict
    fingerprint: str = ""
    config_text: str = ""
    iteration: int = 0
    optimizer: dict | None = None


def _write_tensor_map(fh, tensors: dict):
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode()
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(_DTYPES[_DTYPE_CODES[arr.dtype]], copy=False).tobytes())


def _read_tensor_map(fh) -> dict:
    (count,) = struct.unpack("<I", fh.read(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode()
        code, ndim = struct.unpack("<BB", fh.read(2))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        dtype = np.dtype(_DTYPES[code])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = fh.read(n_bytes)
        if len(raw) != n_bytes:
            raise CheckpointError(f"truncated tensor data for {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return tensors


def save_checkpoint(path, ckpt: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fp = ckpt.fingerprint.encode()
        fh.write(struct.pack("<I", len(fp)))
        fh.write(fp)
        cfg = ckpt.config_text.encode()
        fh.write(struct.pack("<Q", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<Q", ckpt.iteration))
        fh.write(struct.pack("<B", 1 if ckpt.optimizer is not None else 0))
        _write_tensor_map(fh, ckpt.tensors)
        if ckpt.optimizer is not None:
            _write_tensor_map(fh, ckpt.optimizer)


def load_checkpoint(path, expected_fingerprint: str | None = None,
                    force: bool = False) -> Checkpoint:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (fp_len,) = struct.unpack("<I", fh.read(4))
        fingerprint = fh.read(fp_len).decode()
        (cfg_len,) = struct.unpack("<Q", fh.read(8))
        config_text = fh.read(cfg_len).decode()
        (iteration,) = struct.unpack("<Q", fh.read(8))
        (flags,) = struct.unpack("<B", fh.read(1))
        tensors = _read_tensor_map(fh)
        optimizer = _read_tensor_map(fh) if flags & 1 else None
    if expected_fingerprint is not None and fingerprint != expected_fingerprint and not force:
        raise CheckpointError(
            f"config fingerprint mismatch: checkpoint {fingerprint[:12]}... vs "
            f"current {expected_fingerprint[:12]}... (pass force to override)"
        )
    return Checkpoint(tensors, fingerprint, config_text, iteration, optimizer)
