"""Item embedder and the ID classification head.

The embedder is a small fully connected relu network standing in for a CNN
backbone. The head is a bias-free linear layer; its rows are the per-identity
context vectors, so logits are plain dot products with the embedding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node
from .params import ParamStore, glorot_uniform


@dataclass(frozen=True)
class EmbedderConfig:
    input_dim: int = 32
    hidden_dims: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    num_identities: int = 60

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.embed_dim)
        if any(int(d) <= 0 for d in dims):
            raise ValueError(f"all dimensions must be positive, got {dims}")
        if self.num_identities < 2:
            raise ValueError("num_identities must be >= 2")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.embed_dim)


def init_params(config: EmbedderConfig, seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases, Glorot-uniform classifier rows."""
    rng = np.random.default_rng(seed)
    store = ParamStore(seed)
    dims = config.layer_dims
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        store.add(f"W{i}", glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out)))
        store.add(f"b{i}", np.zeros(fan_out))
    c, d = config.num_identities, config.embed_dim
    store.add("head", glorot_uniform(rng, d, c, (c, d)))
    return store


def num_layers(params: ParamStore) -> int:
    n = 0
    while f"W{n}" in params:
        n += 1
    return n


def embed_nodes(params: ParamStore, items) -> Node:
    """Embeddings for a (rows, input_dim) batch, as a graph node."""
    x = ad.as_node(items)
    if x.value.ndim != 2:
        raise DimensionError(f"expected a 2-D item batch, got shape {x.shape}")
    depth = num_layers(params)
    if x.shape[1] != params["W0"].shape[0]:
        raise DimensionError(f"item dim {x.shape[1]} != input_dim {params['W0'].shape[0]}")
    h = x
    for i in range(depth):
        h = ad.matmul(h, params[f"W{i}"]) + params[f"b{i}"]
        if i < depth - 1:
            h = ad.relu(h)
    return h


def logits_nodes(z: Node, params: ParamStore) -> Node:
    """Row-wise ``z @ head.T``: compatibility of each embedding with each identity."""
    head = params["head"]
    if z.shape[-1] != head.shape[1]:
        raise DimensionError(f"embedding dim {z.shape[-1]} != head dim {head.shape[1]}")
    if z.value.ndim == 1:
        return ad.matvec(head, z)
    return ad.matmul(z, ad.transpose(head))


def embed(params: ParamStore, item) -> np.ndarray:
    """Embedding of one item vector (no graph kept)."""
    x = np.asarray(item, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a single item vector, got shape {x.shape}")
    return embed_array(params, x[None, :])[0]


def embed_array(params: ParamStore, items) -> np.ndarray:
    """Plain numpy forward pass; safe to run concurrently on frozen params."""
    h = np.asarray(items, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params["W0"].shape[0]:
        raise DimensionError(f"bad item batch shape {h.shape}")
    depth = num_layers(params)
    for i in range(depth):
        h = h @ params[f"W{i}"].value + params[f"b{i}"].value
        if i < depth - 1:
            h = np.maximum(h, 0.0)
    return h


def logits(z, params: ParamStore) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    head = params["head"].value
    if z.shape[-1] != head.shape[1]:
        raise DimensionError(f"embedding dim {z.shape[-1]} != head dim {head.shape[1]}")
    return z @ head.T


@dataclass
class BatchForward:
    """Graph nodes for one mini-batch forward pass, rows in batch order."""

    embeddings: Node
    logits: Node
    shape: tuple[int, int] = field(default=(0, 0))  # (sets, items per set)


def embed_batch(params: ParamStore, items: np.ndarray) -> BatchForward:
    """Forward a (m, n, input_dim) item tensor; outputs have m*n rows."""
    items = np.asarray(items, dtype=np.float64)
    if items.ndim != 3:
        raise DimensionError(f"expected (sets, items, dim) array, got {items.shape}")
    m, n, dim = items.shape
    z = embed_nodes(params, items.reshape(m * n, dim))
    return BatchForward(z, logits_nodes(z, params), (m, n))
