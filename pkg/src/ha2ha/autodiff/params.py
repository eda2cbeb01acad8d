"""Named parameter store with buffers and a flat binary checkpoint format.

Checkpoint layout (all little-endian):

    b"HA2P" | u32 version | u32 n_entries
    per entry: u8 kind (0 = parameter, 1 = buffer) | u8 regularized |
               u16 name length | name utf-8 | u8 ndim | u32 dims...
    then every entry's values as float32, in table order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor

CKPT_MAGIC = b"HA2P"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered named parameters (each a grad-tracking ``Tensor``) plus
    non-trainable buffers such as batch-norm running statistics.

    ``regularized`` marks the parameters that enter the L1 penalty.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.regularized: set[str] = set()

    def add(self, name: str, value: np.ndarray, regularized: bool = False) -> Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate entry {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        if regularized:
            self.regularized.add(name)
        return t

    def add_buffer(self, name: str, value) -> None:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate entry {name!r}")
        self.buffers[name] = np.array(value, dtype=self.dtype)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def count(self) -> int:
        """Number of trainable scalars."""
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> list[np.ndarray]:
        """Gradient slot per parameter (zeros where nothing accumulated)."""
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.params.values()]

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, t in self.params.items():
            out.add(name, t.data, name in self.regularized)
        for name, b in self.buffers.items():
            out.add_buffer(name, b)
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    # serialization
    def to_bytes(self) -> bytes:
        entries = [(0, n, t.data) for n, t in self.params.items()] + [(1, n, b) for n, b in self.buffers.items()]
        head = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(entries))]
        for kind, name, arr in entries:
            raw = name.encode("utf-8")
            head.append(struct.pack("<BBH", kind, int(name in self.regularized), len(raw)))
            head.append(raw)
            head.append(struct.pack("<B", arr.ndim))
            head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body = [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, _, arr in entries]
        return b"".join(head + body)

    @classmethod
    def from_bytes(cls, blob: bytes, dtype=np.float32) -> "ParamStore":
        if blob[:4] != CKPT_MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        try:
            version, n = struct.unpack_from("<II", blob, 4)
            if version != CKPT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            pos = 12
            table = []
            for _ in range(n):
                kind, reg, ln = struct.unpack_from("<BBH", blob, pos)
                pos += 4
                name = blob[pos : pos + ln].decode("utf-8")
                pos += ln
                (ndim,) = struct.unpack_from("<B", blob, pos)
                pos += 1
                shape = struct.unpack_from(f"<{ndim}I", blob, pos)
                pos += 4 * ndim
                table.append((kind, bool(reg), name, shape))
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint header: {exc}") from None
        store = cls(dtype)
        for kind, reg, name, shape in table:
            size = int(np.prod(shape, dtype=np.int64))
            nbytes = 4 * size
            if pos + nbytes > len(blob):
                raise CheckpointError("truncated checkpoint payload")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += nbytes
            if kind == 0:
                store.add(name, arr, reg)
            else:
                store.add_buffer(name, arr)
        if pos != len(blob):
            raise CheckpointError("trailing bytes after checkpoint payload")
        return store
