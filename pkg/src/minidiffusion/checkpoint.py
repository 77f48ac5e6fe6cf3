"""Tagged binary checkpoint codec: named tensors plus training metadata.

Layout (all little-endian, version 1):

    magic "MDIF", u32 version
    u32 timesteps, str schedule_kind
    u32 io_channels, u32 model_channels, i32 class_count (-1 = none), u8 depth
    u32 epoch
    u16 stream count, then per stream: str name, u64 state
    tensor table (sorted by name): u32 count, then per tensor:
        str name, u8 dtype (0 = f32, 1 = f64), u8 ndim, u64 dims..., payload
    u8 optimizer flag; if 1: u64 step count, tensor table of moments

Strings are u16 length + utf-8 bytes. Writing is order-normalized, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np

from .unet import UNetConfig

MAGIC = b"MDIF"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    """Structurally invalid checkpoint file or metadata mismatch."""


@dataclass
class OptimizerSnapshot:
    step_count: int
    moments: dict[str, np.ndarray]  # "m.<param>" / "v.<param>"


@dataclass
class Checkpoint:
    timesteps: int
    schedule_kind: str
    unet_config: UNetConfig
    epoch: int
    rng_states: dict[str, int]
    tensors: dict[str, np.ndarray]
    optimizer: OptimizerSnapshot | None = None


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_tensor_table(tensors: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        out.append(_pack_str(name))
        out.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(out)


def serialize(ck: Checkpoint) -> bytes:
    cfg = ck.unet_config
    out = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", ck.timesteps),
        _pack_str(ck.schedule_kind),
        struct.pack(
            "<IIiB",
            cfg.io_channels,
            cfg.model_channels,
            -1 if cfg.class_count is None else cfg.class_count,
            1 if cfg.depth_extension else 0,
        ),
        struct.pack("<I", ck.epoch),
        struct.pack("<H", len(ck.rng_states)),
    ]
    for name in sorted(ck.rng_states):
        out.append(_pack_str(name) + struct.pack("<Q", ck.rng_states[name]))
    out.append(_pack_tensor_table(ck.tensors))
    if ck.optimizer is None:
        out.append(struct.pack("<B", 0))
    else:
        out.append(struct.pack("<B", 1))
        out.append(struct.pack("<Q", ck.optimizer.step_count))
        out.append(_pack_tensor_table(ck.optimizer.moments))
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.buf = BytesIO(raw)

    def take(self, n: int, what: str) -> bytes:
        data = self.buf.read(n)
        if len(data) != n:
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes for {what}, got {len(data)}")
        return data

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<H", f"{what} length")
        return self.take(n, what).decode("utf-8")

    def tensor_table(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", "tensor count")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = self.string("tensor name")
            tag, ndim = self.unpack("<BB", f"tensor {name!r} header")
            if tag not in _TAG_DTYPES:
                raise CheckpointError(f"unknown dtype tag {tag} for tensor {name!r}")
            dims = self.unpack(f"<{ndim}Q", f"tensor {name!r} dims")
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            payload = self.take(nbytes, f"tensor {name!r} payload")
            tensors[name] = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(
                dtype
            ).reshape(dims)
        return tensors

    def at_end(self) -> bool:
        extra = self.buf.read(1)
        return extra == b""


def deserialize(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic: not a {MAGIC.decode()} checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (timesteps,) = r.unpack("<I", "timesteps")
    schedule_kind = r.string("schedule kind")
    io_ch, model_ch, class_count, depth = r.unpack("<IIiB", "model config")
    cfg = UNetConfig(
        io_channels=io_ch,
        model_channels=model_ch,
        class_count=None if class_count < 0 else class_count,
        depth_extension=bool(depth),
    )
    (epoch,) = r.unpack("<I", "epoch")
    (n_streams,) = r.unpack("<H", "rng stream count")
    rng_states: dict[str, int] = {}
    for _ in range(n_streams):
        name = r.string("stream name")
        (state,) = r.unpack("<Q", f"stream {name!r} state")
        rng_states[name] = state
    tensors = r.tensor_table()
    (opt_flag,) = r.unpack("<B", "optimizer flag")
    optimizer = None
    if opt_flag == 1:
        (step_count,) = r.unpack("<Q", "optimizer step count")
        optimizer = OptimizerSnapshot(step_count=step_count, moments=r.tensor_table())
    elif opt_flag != 0:
        raise CheckpointError(f"bad optimizer flag {opt_flag}")
    if not r.at_end():
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(
        timesteps=timesteps,
        schedule_kind=schedule_kind,
        unet_config=cfg,
        epoch=epoch,
        rng_states=rng_states,
        tensors=tensors,
        optimizer=optimizer,
    )


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(serialize(ck))


def load_checkpoint(path) -> Checkpoint:
    return deserialize(Path(path).read_bytes())


def validate_schedule(ck: Checkpoint, timesteps: int, schedule_kind: str = "linear") -> None:
    """Reject using a checkpoint with a sampler built over a different schedule."""
    if ck.timesteps != timesteps or ck.schedule_kind != schedule_kind:
        raise CheckpointError(
            f"schedule mismatch: checkpoint has {ck.schedule_kind}/T={ck.timesteps}, "
            f"requested {schedule_kind}/T={timesteps}"
        )
