"""Named parameter storage, Adam updates, and bit-exact checkpoints.

Initialization is a pure function of (init_seed, parameter name), so the
order in which modules register parameters never changes the values. The
checkpoint container is a single binary file with a JSON header and raw
little-endian float64 payload; writing the same store twice yields
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import DiffValue
from .errors import ChecksumMismatch, MissingGrad, ParseError, ShapeMismatch

_MAGIC = b"LGCKPT1\n"
CHECKPOINT_SCHEMA = 1


@dataclass
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class ParamStore:
    """name -> trainable DiffValue, plus optimizer state."""

    def __init__(self, init_seed: int = 0):
        self.init_seed = int(init_seed)
        self._params: dict[str, DiffValue] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self.adam_t = 0

    def _init_array(self, name: str, shape: tuple[int, ...], init: str) -> np.ndarray:
        if init == "zeros":
            return np.zeros(shape)
        if init == "ones":
            return np.ones(shape)
        if init.startswith("constant:"):
            return np.full(shape, float(init.split(":", 1)[1]))
        if init == "uniform_fanin":
            rng = np.random.default_rng(
                [self.init_seed, zlib.crc32(name.encode("utf-8"))]
            )
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            a = float(np.sqrt(1.0 / max(fan_in, 1)))
            return rng.uniform(-a, a, size=shape)
        raise ValueError(f"unknown initializer '{init}'")

    def param(self, name: str, shape: tuple[int, ...], init: str = "uniform_fanin") -> DiffValue:
        shape = tuple(int(d) for d in shape)
        if name in self._params:
            have = self._params[name]
            if have.data.shape != shape:
                raise ShapeMismatch(
                    f"param '{name}' exists with shape {have.data.shape}, requested {shape}"
                )
            return have
        value = DiffValue(self._init_array(name, shape, init), needs_grad=True)
        self._params[name] = value
        return value

    def __getitem__(self, name: str) -> DiffValue:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def n_params(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def grads_norm(self) -> float:
        total = 0.0
        for p in self._params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))


def optimizer_step(store: ParamStore, lr: float, hyper: Optional[AdamHyper] = None) -> None:
    """Bias-corrected adaptive moment update; gradients are zeroed after."""
    hyper = hyper or AdamHyper()
    for name in store.names():
        if store[name].grad is None:
            raise MissingGrad(f"parameter '{name}' has no gradient")
    store.adam_t += 1
    t = store.adam_t
    b1, b2 = hyper.beta1, hyper.beta2
    for name in store.names():
        p = store[name]
        g = p.grad
        m = store._adam_m.get(name)
        v = store._adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        store._adam_m[name] = m
        store._adam_v[name] = v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    store.zero_grads()


# ---------------------------------------------------------------------------
# Checkpoint IO
# ---------------------------------------------------------------------------


def save_checkpoint(store: ParamStore, path: str, meta: Optional[dict] = None) -> None:
    entries = []
    chunks = []
    offset = 0

    def push(name: str, arr: np.ndarray):
        nonlocal offset
        buf = np.ascontiguousarray(arr, dtype=np.float64).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(buf)
        offset += len(buf)

    for name in store.names():
        push(f"p:{name}", store[name].data)
    for name in sorted(store._adam_m):
        push(f"m:{name}", store._adam_m[name])
        push(f"v:{name}", store._adam_v[name])

    payload = b"".join(chunks)
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "init_seed": store.init_seed,
        "adam_t": store.adam_t,
        "meta": meta or {},
        "arrays": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path: str) -> tuple[ParamStore, dict]:
    """Rebuild a ParamStore (with optimizer state) and return (store, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    if header.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ParseError(f"{path}: unsupported checkpoint schema")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")

    store = ParamStore(init_seed=header["init_seed"])
    store.adam_t = int(header["adam_t"])
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start).reshape(shape).copy()
        kind, name = entry["name"].split(":", 1)
        if kind == "p":
            store._params[name] = DiffValue(arr, needs_grad=True)
        elif kind == "m":
            store._adam_m[name] = arr
        elif kind == "v":
            store._adam_v[name] = arr
        else:
            raise ParseError(f"{path}: unknown array kind '{kind}'")
    return store, header.get("meta", {})
