"""Trainable heads mapping frozen base features to touched-up features.

Two kinds exist: ``linear`` (``y = x W + b``) and ``mlp`` with one ReLU
hidden layer (``y = relu(x W1 + b1) W2 + b2``). Parameters live in an
ordered dict so optimizers and checkpoints share one parameter order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError

TUGA_MAGIC = b"TUGA"
TUGA_VERSION = 1
_TUGA_HEADER = struct.Struct("<4sIBQQQ")
KINDS = ("linear", "mlp")


@dataclass(frozen=True)
class AdapterSpec:
    kind: str = "mlp"
    output_dim: int | None = None
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown adapter kind {self.kind!r}")


def kaiming_uniform(fan_in: int, shape, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Adapter:
    """Linear or one-hidden-layer MLP head with analytic backward pass."""

    def __init__(self, kind: str, input_dim: int, output_dim: int, hidden_dim: int = 0,
                 params: dict | None = None):
        if kind not in KINDS:
            raise InputError(f"unknown adapter kind {kind!r}")
        self.kind = kind
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.hidden_dim = int(hidden_dim) if kind == "mlp" else 0
        if kind == "mlp" and self.hidden_dim < 1:
            raise InputError("mlp adapter needs hidden_dim >= 1")
        self.params = params if params is not None else self._zeros()
        for name, shape in self.shapes().items():
            if self.params[name].shape != shape:
                raise InputError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def from_spec(cls, spec: AdapterSpec, input_dim: int, rng: np.random.Generator) -> "Adapter":
        out = spec.output_dim or input_dim
        hidden = spec.hidden_dim or out
        adapter = cls(spec.kind, input_dim, out, hidden)
        for name, shape in adapter.shapes().items():
            if name.startswith("w"):
                adapter.params[name] = kaiming_uniform(shape[0], shape, rng)
        return adapter

    def shapes(self) -> dict:
        if self.kind == "linear":
            return {"w": (self.input_dim, self.output_dim), "b": (self.output_dim,)}
        return {
            "w1": (self.input_dim, self.hidden_dim), "b1": (self.hidden_dim,),
            "w2": (self.hidden_dim, self.output_dim), "b2": (self.output_dim,),
        }

    def _zeros(self) -> dict:
        return {k: np.zeros(s) for k, s in self.shapes().items()}

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Adapter":
        return Adapter(self.kind, self.input_dim, self.output_dim, self.hidden_dim,
                       {k: p.copy() for k, p in self.params.items()})

    def forward(self, x: np.ndarray, return_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise InputError(f"adapter expects dim {self.input_dim}, got {x.shape[-1]}")
        p = self.params
        if self.kind == "linear":
            y = x @ p["w"] + p["b"]
            cache = (x,)
        else:
            h = np.maximum(x @ p["w1"] + p["b1"], 0.0)
            y = h @ p["w2"] + p["b2"]
            cache = (x, h)
        return (y, cache) if return_cache else y

    def backward(self, cache, dy: np.ndarray) -> dict:
        """Parameter gradients given upstream gradient ``dy`` of the outputs."""
        p = self.params
        if self.kind == "linear":
            (x,) = cache
            return {"w": x.T @ dy, "b": dy.sum(0)}
        x, h = cache
        dh = (dy @ p["w2"].T) * (h > 0)
        return {"w1": x.T @ dh, "b1": dh.sum(0), "w2": h.T @ dy, "b2": dy.sum(0)}

    # ------------------------------------------------------------ checkpoint

    def save(self, path) -> None:
        """Write a TUGA checkpoint (float32 parameters in ``shapes()`` order)."""
        kind = KINDS.index(self.kind)
        with open(path, "wb") as fh:
            fh.write(_TUGA_HEADER.pack(TUGA_MAGIC, TUGA_VERSION, kind,
                                       self.input_dim, self.hidden_dim, self.output_dim))
            for name in self.shapes():
                fh.write(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Adapter":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _TUGA_HEADER.size:
            raise InputError(f"{path}: truncated adapter checkpoint")
        magic, version, kind, d_in, d_hid, d_out = _TUGA_HEADER.unpack_from(blob)
        if magic != TUGA_MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}")
        if version != TUGA_VERSION:
            raise InputError(f"{path}: unsupported adapter version {version}")
        if kind >= len(KINDS):
            raise InputError(f"{path}: unknown adapter kind byte {kind}")
        adapter = cls(KINDS[kind], d_in, d_out, d_hid)
        offset = _TUGA_HEADER.size
        for name, shape in adapter.shapes().items():
            count = int(np.prod(shape))
            if offset + 4 * count > len(blob):
                raise InputError(f"{path}: truncated parameter {name}")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            adapter.params[name] = arr.astype(np.float64).reshape(shape)
            offset += 4 * count
        if offset != len(blob):
            raise InputError(f"{path}: trailing bytes after parameters")
        return adapter
