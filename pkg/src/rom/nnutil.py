"""Parameter initialization and MLP helpers shared by encoder and AGNN.

Parameters live in a flat dict name -> float64 array; graph forwards bind
them as param nodes, numpy forwards read them directly.
"""

from __future__ import annotations

import numpy as np

from . import diffcore


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_mlp(params: dict, rng, prefix: str, sizes) -> None:
    """Create weights for an MLP with layer widths `sizes` (input first)."""
    for i in range(len(sizes) - 1):
        params[f"{prefix}.{i}.W"] = glorot(rng, sizes[i], sizes[i + 1])
        params[f"{prefix}.{i}.b"] = np.zeros((1, sizes[i + 1]))


def mlp_depth(params: dict, prefix: str) -> int:
    i = 0
    while f"{prefix}.{i}.W" in params:
        i += 1
    return i


def mlp_graph(g, nodes: dict, prefix: str, x: int, depth: int) -> int:
    layers = [(nodes[f"{prefix}.{i}.W"], nodes[f"{prefix}.{i}.b"]) for i in range(depth)]
    return diffcore.mlp(g, x, layers)


def mlp_np(params: dict, prefix: str, x: np.ndarray, depth: int) -> np.ndarray:
    h = x
    for i in range(depth):
        h = h @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"]
        if i < depth - 1:
            h = np.maximum(h, 0.0)
    return h


def bind_params(g, params: dict) -> dict:
    """Insert every parameter as a param node; returns name -> node id."""
    return {name: g.param(val) for name, val in params.items()}


def collect_grads(g, nodes: dict) -> dict:
    return {name: g.grad(nid) for name, nid in nodes.items()}
