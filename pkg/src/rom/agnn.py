"""Attentional graph neural network over objects of an image pair.

Four stages alternate self- and cross-attention. Updates are residual:
x <- x + MLP(concat(x, message)), with single-head dot-product attention
over the complete graph (self-attention includes the self edge).
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .nnutil import glorot, init_mlp, mlp_graph, mlp_np


def init_agnn_params(cfg: ModelConfig, rng) -> dict:
    d = cfg.d_agnn
    params = {}
    # input projection defaults to identity plus noise so an untrained
    # AGNN passes object features through nearly unchanged
    params["agnn.proj.W"] = np.eye(cfg.d_obj, d) + 0.01 * rng.standard_normal((cfg.d_obj, d))
    params["agnn.proj.b"] = np.zeros((1, d))
    for s in range(len(cfg.agnn_stages)):
        for head in ("q", "k", "v"):
            params[f"agnn.{s}.{head}.W"] = glorot(rng, d, d)
            params[f"agnn.{s}.{head}.b"] = np.zeros((1, d))
        init_mlp(params, rng, f"agnn.{s}.mlp", (2 * d, cfg.agnn_hidden, d))
    init_mlp(params, rng, "agnn.dist", (2 * d, cfg.dist_hidden, 1))
    return params


def _affine_g(g, nodes, prefix, x):
    return g.add(g.matmul(x, nodes[f"{prefix}.W"]), nodes[f"{prefix}.b"])


def attention_stage(g, nodes: dict, stage: int, x1: int, x2: int, mode: str):
    """One AGNN stage on both images' features; returns updated (x1, x2)."""
    if mode not in ("self", "cross"):
        raise ValueError(f"unknown attention mode {mode!r}")
    if mode == "cross" and (g.value(x1).shape[0] == 0 or g.value(x2).shape[0] == 0):
        raise ValueError("cross attention requires objects on both sides")
    pre = f"agnn.{stage}"

    def update(x, src):
        q = _affine_g(g, nodes, f"{pre}.q", x)
        k = _affine_g(g, nodes, f"{pre}.k", src)
        v = _affine_g(g, nodes, f"{pre}.v", src)
        alpha = g.row_softmax(g.matmul(q, g.transpose(k)))
        msg = g.matmul(alpha, v)
        return g.add(x, mlp_graph(g, nodes, f"{pre}.mlp", g.concat_cols(x, msg), 2))

    if mode == "self":
        return update(x1, x1), update(x2, x2)
    return update(x1, x2), update(x2, x1)


def refine(g, nodes: dict, cfg: ModelConfig, f1: int, f2: int):
    """Project object features and run all attention stages."""
    x1 = _affine_g(g, nodes, "agnn.proj", f1)
    x2 = _affine_g(g, nodes, "agnn.proj", f2)
    for s, mode in enumerate(cfg.agnn_stages):
        x1, x2 = attention_stage(g, nodes, s, x1, x2, mode)
    return x1, x2


def rel_distance_graph(g, nodes: dict, x: int, n: int):
    """Predicted relative distance for every ordered pair i != j.

    Gathers row pairs with constant 0/1 selection matrices so the result
    stays differentiable; output is an (n*(n-1)) x 1 node.
    """
    if n < 2:
        return None
    sel_i = np.zeros((n * (n - 1), n))
    sel_j = np.zeros((n * (n - 1), n))
    r = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            sel_i[r, i] = 1.0
            sel_j[r, j] = 1.0
            r += 1
    xi = g.matmul(g.constant(sel_i), x)
    xj = g.matmul(g.constant(sel_j), x)
    return mlp_graph(g, nodes, "agnn.dist", g.concat_cols(xi, xj), 2)


def ordered_pair_targets(rel: np.ndarray) -> np.ndarray:
    """GT distances flattened in the same ordered-pair layout."""
    n = rel.shape[0]
    return np.array([rel[i, j] for i in range(n) for j in range(n) if i != j]).reshape(-1, 1)


# -- numpy forward ----------------------------------------------------------


def _affine_np(params, prefix, x):
    return x @ params[f"{prefix}.W"] + params[f"{prefix}.b"]


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def refine_np(params: dict, cfg: ModelConfig, f1: np.ndarray, f2: np.ndarray):
    x1 = _affine_np(params, "agnn.proj", f1)
    x2 = _affine_np(params, "agnn.proj", f2)
    for s, mode in enumerate(cfg.agnn_stages):
        pre = f"agnn.{s}"

        def update(x, src):
            q = _affine_np(params, f"{pre}.q", x)
            k = _affine_np(params, f"{pre}.k", src)
            v = _affine_np(params, f"{pre}.v", src)
            msg = _softmax_rows(q @ k.T) @ v
            return x + mlp_np(params, f"{pre}.mlp",
                              np.concatenate([x, msg], axis=1), 2)

        if mode == "self":
            x1, x2 = update(x1, x1), update(x2, x2)
        else:
            if x1.shape[0] == 0 or x2.shape[0] == 0:
                raise ValueError("cross attention requires objects on both sides")
            x1, x2 = update(x1, x2), update(x2, x1)
    return x1, x2


def predict_rel_distance_np(params: dict, x: np.ndarray) -> np.ndarray:
    """(n, n) matrix of predicted distances; diagonal fixed to zero."""
    n = x.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pair = np.concatenate([x[i], x[j]]).reshape(1, -1)
            out[i, j] = mlp_np(params, "agnn.dist", pair, 2)[0, 0]
    return out
