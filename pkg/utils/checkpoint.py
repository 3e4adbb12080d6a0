"""
Binary checkpoint: every network parameter plus both Adam states.

Layout (little-endian):
    b"MNCK" | u16 version | u32 metadata length | metadata (UTF-8 JSON)
    u32 tensor count | per tensor: u16 name length, name, u8 rank, u32 dims..., float32 data
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from utils.adam import AdamState
from utils.errors import CheckpointError
from utils.logger import log_event
from utils.models import MidiNet, ModelVariant
from utils.tensor import MAX_RANK

CHECKPOINT_MAGIC = b"MNCK"
CHECKPOINT_VERSION = 1
_ADAM_KEYS = ("g", "d")


@dataclass
class Checkpoint:
    variant: ModelVariant
    params: Dict[str, np.ndarray]
    adam: Dict[str, AdamState] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    config: dict = field(default_factory=dict)

    @classmethod
    def from_net(cls, net: MidiNet, adam: Dict[str, AdamState], epoch: int, step: int, config: dict) -> "Checkpoint":
        params = {name: p.data.astype(np.float32).copy() for name, p in net.params.items()}
        return cls(net.variant, params, adam, epoch, step, config)

    def build_net(self) -> MidiNet:
        """A network for this variant carrying the stored parameter values."""
        net = MidiNet(self.variant)
        for name, p in net.params.items():
            p.data = self.params[name].astype(p.data.dtype).copy()
            p.zero_grad()
        return net


def _tensor_block(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    array = np.ascontiguousarray(array, dtype="<f4")
    head = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.tobytes()


def save_checkpoint(path: str, ckpt: Checkpoint):
    tensors = dict(ckpt.params)
    adam_meta = {}
    for key, state in ckpt.adam.items():
        adam_meta[key] = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "step": state.step}
        for name in state.m:
            tensors[f"adam.{key}.m.{name}"] = state.m[name]
            tensors[f"adam.{key}.v.{name}"] = state.v[name]
    meta = json.dumps({
        "variant": ckpt.variant.model_dump(mode="json"),
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "adam": adam_meta,
        "config": ckpt.config,
    }, sort_keys=True).encode("utf-8")

    blob = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    blob.extend(_tensor_block(name, array) for name, array in tensors.items())
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(b"".join(blob))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    log_event("checkpoint", "saved", f"path={path}, epoch={ckpt.epoch}, step={ckpt.step}, tensors={len(tensors)}")


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str, variant: Optional[ModelVariant] = None) -> Checkpoint:
    """
    Read a checkpoint, validating every parameter shape against its variant.

    When `variant` is given the stored shapes must also match what that variant
    would build.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    reader = _Reader(blob)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = reader.unpack("<HI")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
        if not isinstance(meta, dict):
            raise ValueError(f"metadata is a JSON {type(meta).__name__}, not an object")
        stored_variant = ModelVariant.model_validate(meta["variant"])
    except (ValueError, KeyError) as e:
        raise CheckpointError(f"{path}: corrupt metadata ({e})") from e

    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (rank,) = reader.unpack("<B")
        if rank > MAX_RANK:
            raise CheckpointError(f"{path}: tensor {name} has rank {rank}, at most {MAX_RANK} supported")
        shape = reader.unpack(f"<{rank}I")
        tensors[name] = np.frombuffer(reader.take(4 * math.prod(shape)), dtype="<f4").reshape(shape).astype(np.float32)
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - reader.pos} trailing bytes")

    expected = MidiNet.param_shapes(variant if variant is not None else stored_variant)
    params = {name: array for name, array in tensors.items() if not name.startswith("adam.")}
    for name, shape in expected.items():
        if name not in params:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if params[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: shape mismatch for {name}: stored {params[name].shape}, expected {tuple(shape)}")
    unexpected = sorted(set(params) - set(expected))
    if unexpected:
        raise CheckpointError(f"{path}: unexpected parameters {', '.join(unexpected)}")

    adam = {}
    try:
        for key, hyper in dict(meta.get("adam", {})).items():
            state = AdamState(lr=float(hyper["lr"]), beta1=float(hyper["beta1"]), beta2=float(hyper["beta2"]),
                              eps=float(hyper["eps"]), step=int(hyper["step"]))
            prefix = f"adam.{key}."
            for name, array in tensors.items():
                if name.startswith(prefix + "m."):
                    state.m[name[len(prefix) + 2:]] = array.copy()
                elif name.startswith(prefix + "v."):
                    state.v[name[len(prefix) + 2:]] = array.copy()
            adam[key] = state
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt optimizer metadata ({e!r})") from e
    return Checkpoint(stored_variant, params, adam, meta.get("epoch", 0), meta.get("step", 0), meta.get("config", {}))
