"""Named parameter container and its checkpoint format.

A checkpoint is a numpy ``.npz`` archive. Every parameter array is stored as
little-endian float64 (``<f8``) under its own name; two reserved entries hold
the format version and the initialisation seed.
"""
from __future__ import annotations

import os
from typing import Iterator

import numpy as np

from .autodiff import Node

FORMAT_VERSION = 1
_VERSION_KEY = "__format_version__"
_SEED_KEY = "__seed__"
_ITER_KEY = "__iteration__"


class CheckpointError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Ordered mapping of unique names to trainable :class:`Node` leaves."""

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self.iteration = 0  # training iterations already applied, for resuming
        self._params: dict[str, Node] = {}

    def add(self, name: str, value) -> Node:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if name.startswith("__"):
            raise KeyError(f"parameter names may not start with '__': {name!r}")
        node = Node(np.array(value, dtype=np.float64), name=name)
        self._params[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def nodes(self) -> list[Node]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for node in self._params.values():
            node.grad = np.zeros_like(node.value)

    def values(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values, keyed by name."""
        return {k: v.value.copy() for k, v in self._params.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed)
        out.iteration = self.iteration
        for name, node in self._params.items():
            out.add(name, node.value.copy())
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([n.value.ravel() for n in self._params.values()])

    def save(self, path: str | os.PathLike) -> None:
        arrays = {k: np.ascontiguousarray(v.value, dtype="<f8") for k, v in self._params.items()}
        arrays[_VERSION_KEY] = np.array(FORMAT_VERSION, dtype="<i8")
        arrays[_SEED_KEY] = np.array(-1 if self.seed is None else self.seed, dtype="<i8")
        arrays[_ITER_KEY] = np.array(self.iteration, dtype="<i8")
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ParamStore":
        with np.load(path, allow_pickle=False) as data:
            if _VERSION_KEY not in data.files:
                raise CheckpointError(f"{path}: missing format version")
            version = int(data[_VERSION_KEY])
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported format version {version}")
            seed = int(data[_SEED_KEY])
            store = cls(None if seed < 0 else seed)
            if _ITER_KEY in data.files:
                store.iteration = int(data[_ITER_KEY])
            for name in data.files:
                if name.startswith("__"):
                    continue
                store.add(name, data[name].astype(np.float64))
        return store
