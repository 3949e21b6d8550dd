"""Named parameter arrays with paired gradient buffers and Adam state.

The checkpoint format is a small binary container: a magic string, a
JSON header mapping names to shapes/offsets, then the concatenated raw
little-endian float64 parameter bytes. Round-trips are bit-exact and
the bytes are a pure function of the contents.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import IoError, ShapeMismatch
from .tensor import Tensor

_MAGIC = b"XTCKPT1\n"


class ParamStore:
    """Flat named collection of parameter arrays backing a learned component."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise ShapeMismatch(f"duplicate parameter {name!r}")
        value = np.asarray(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor sharing this store's persistent gradient buffer."""
        return Tensor.leaf(self.values[name], self.grads[name])

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def names(self):
        return list(self.values)

    def copy(self) -> "ParamStore":
        """Deep copy of values (fresh optimizer state and gradients)."""
        out = ParamStore()
        for name, value in self.values.items():
            out.add(name, value.copy())
        out.step_count = self.step_count
        return out

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name) -> np.ndarray:
        return self.values[name]

    # -- initialization helpers ------------------------------------------------

    def add_linear(self, name: str, fan_in: int, fan_out: int,
                   rng: np.random.Generator, zero_init=False) -> None:
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, (fan_in, fan_out))
        self.add(f"{name}.w", w)
        self.add(f"{name}.b", np.zeros(fan_out))

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = sorted(self.values)
        header = {
            "step": self.step_count,
            "arrays": {n: list(self.values[n].shape) for n in names},
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        blob = b"".join(
            np.ascontiguousarray(self.values[n], dtype="<f8").tobytes() for n in names
        )
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(blob)
        return path

    @classmethod
    def load(cls, path) -> "ParamStore":
        path = Path(path)
        if not path.exists():
            raise IoError(f"no such checkpoint: {path}")
        raw = path.read_bytes()
        if raw[: len(_MAGIC)] != _MAGIC:
            raise IoError(f"{path} is not a parameter checkpoint")
        (head_len,) = struct.unpack("<I", raw[len(_MAGIC) : len(_MAGIC) + 4])
        start = len(_MAGIC) + 4
        header = json.loads(raw[start : start + head_len].decode())
        store = cls()
        store.step_count = int(header.get("step", 0))
        offset = start + head_len
        for name in sorted(header["arrays"]):
            shape = tuple(header["arrays"][name])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(
                raw, dtype="<f8", count=count, offset=offset
            ).reshape(shape).astype(np.float64)
            store.add(name, arr.copy())
            offset += count * 8
        return store


def adam_step(params: ParamStore, lr: float, beta1=0.9, beta2=0.999,
              eps=1e-8, weight_decay=0.0) -> None:
    """Standard Adam with bias correction; clears gradients afterwards."""
    params.step_count += 1
    t = params.step_count
    for name, value in params.values.items():
        g = params.grads[name]
        if weight_decay:
            g = g + weight_decay * value
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()
