"""Versioned binary checkpoint container.

Layout (little-endian throughout)::

    b"ASCK"  u32 version
    u32 header_len, header (UTF-8 JSON: spec, iteration, rng state, meta)
    u32 record_count
    record_count x ( u32 key_len, key (UTF-8), u32 ndim, ndim x u32 dims,
                     prod(dims) x f32 )

Record keys are the network's layer paths; optimizer moments are stored
under ``adam.m/<path>`` and ``adam.v/<path>``.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from .network import Network
from .unet import UNetSpec, build_unet
from .vnet import VNetSpec, build_vnet

MAGIC = b"ASCK"
VERSION = 1

Spec = Union[UNetSpec, VNetSpec]


def spec_to_dict(spec: Spec) -> dict:
    arch = "unet" if isinstance(spec, UNetSpec) else "vnet"
    return {"arch": arch, **asdict(spec)}


def spec_from_dict(d: dict) -> Spec:
    d = dict(d)
    arch = d.pop("arch")
    if arch == "unet":
        return UNetSpec(**d)
    if arch == "vnet":
        return VNetSpec(**d)
    raise ValueError(f"unknown architecture {arch!r}")


def build_network(spec: Spec, rng: Optional[np.random.Generator] = None) -> Network:
    rng = np.random.default_rng(0) if rng is None else rng
    return build_unet(spec, rng) if isinstance(spec, UNetSpec) else build_vnet(spec, rng)


@dataclass
class Checkpoint:
    spec: Spec
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    iteration: int = 0
    rng_state: Optional[dict] = None
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_network(cls, net: Network, **kwargs) -> "Checkpoint":
        params = {k: np.array(v, dtype=np.float32) for k, v in net.state_dict().items()}
        return cls(spec=net.spec, params=params, **kwargs)

    def to_network(self) -> Network:
        net = build_network(self.spec)
        net.load_state_dict(self.params)
        return net

    # -- serialization --------------------------------------------------
    def to_bytes(self) -> bytes:
        header = {
            "spec": spec_to_dict(self.spec),
            "iteration": self.iteration,
            "optimizer_step": self.optimizer_step,
            "rng_state": self.rng_state,
            "meta": self.meta,
        }
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        records = list(self.params.items())
        records += [(k, v) for k, v in self.optimizer.items()]
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", self.version))
        buf.write(struct.pack("<I", len(hbytes)))
        buf.write(hbytes)
        buf.write(struct.pack("<I", len(records)))
        for key, arr in records:
            kb = key.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            buf.write(struct.pack("<I", len(kb)))
            buf.write(kb)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        r = _Reader(raw)
        if r.take(4) != MAGIC:
            raise ValueError("not a checkpoint: bad magic (expected b'ASCK')")
        version = r.u32()
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(r.take(r.u32()).decode("utf-8"))
        params: Dict[str, np.ndarray] = {}
        optimizer: Dict[str, np.ndarray] = {}
        for _ in range(r.u32()):
            key = r.take(r.u32()).decode("utf-8")
            ndim = r.u32()
            shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
            (optimizer if key.startswith("adam.") else params)[key] = arr
        if r.pos != len(raw):
            raise ValueError(f"checkpoint has {len(raw) - r.pos} trailing bytes")
        return cls(spec=spec_from_dict(header["spec"]), params=params, optimizer=optimizer,
                   optimizer_step=header["optimizer_step"], iteration=header["iteration"],
                   rng_state=header["rng_state"], meta=header.get("meta", {}), version=version)

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(
                f"truncated checkpoint: need {n} bytes at offset {self.pos}, file has {len(self.raw)}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]
