"""Per-object encoder: bounding box + visual feature -> object feature.

The location MLP embeds normalized box coordinates; the concatenated
input feature is split into a view-dependent branch (3D position head)
and a view-independent branch (classification head). The final object
feature is the concatenation (f_dep, f_indep).
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .nnutil import init_mlp, mlp_graph, mlp_np


def init_encoder_params(cfg: ModelConfig, rng) -> dict:
    params = {}
    init_mlp(params, rng, "enc.loc", (4, *cfg.loc_layers))
    d_in = cfg.d_viz + cfg.d_loc
    init_mlp(params, rng, "enc.dep", (d_in, *cfg.branch_layers))
    init_mlp(params, rng, "enc.indep", (d_in, *cfg.branch_layers))
    init_mlp(params, rng, "enc.pos", (cfg.d_branch, cfg.pos_hidden, 3))
    init_mlp(params, rng, "enc.cls", (cfg.d_branch, cfg.cls_hidden, cfg.num_classes))
    return params


def validate_bboxes(bboxes: np.ndarray) -> np.ndarray:
    b = np.asarray(bboxes, dtype=np.float64).reshape(-1, 4)
    if np.any(b < 0.0) or np.any(b > 1.0):
        raise ValueError("bbox coordinates must lie in [0,1]")
    if np.any(b[:, 0] >= b[:, 2]) or np.any(b[:, 1] >= b[:, 3]):
        raise ValueError("bbox must satisfy x_min < x_max and y_min < y_max")
    return b


def encode_objects(g, nodes: dict, cfg: ModelConfig, fviz: int, bbox: int) -> dict:
    """Graph forward for a batch of objects (rows). Returns node ids."""
    nloc = len(cfg.loc_layers)
    nbr = len(cfg.branch_layers)
    floc = mlp_graph(g, nodes, "enc.loc", bbox, nloc)
    fin = g.concat_cols(fviz, floc)
    fdep = mlp_graph(g, nodes, "enc.dep", fin, nbr)
    findep = mlp_graph(g, nodes, "enc.indep", fin, nbr)
    fobj = g.concat_cols(fdep, findep)
    pos = mlp_graph(g, nodes, "enc.pos", fdep, 2)
    logits = mlp_graph(g, nodes, "enc.cls", findep, 2)
    return {"f_loc": floc, "f_in": fin, "f_dep": fdep, "f_indep": findep,
            "f_obj": fobj, "pos": pos, "logits": logits}


def encode_objects_np(params: dict, cfg: ModelConfig, fviz: np.ndarray,
                      bbox: np.ndarray) -> dict:
    """Numpy forward, numerically identical to the graph version."""
    bbox = validate_bboxes(bbox)
    if fviz.shape[1] != cfg.d_viz:
        raise ValueError(f"expected visual features of width {cfg.d_viz}, "
                         f"got {fviz.shape[1]}")
    nloc = len(cfg.loc_layers)
    nbr = len(cfg.branch_layers)
    floc = mlp_np(params, "enc.loc", bbox, nloc)
    fin = np.concatenate([fviz, floc], axis=1)
    fdep = mlp_np(params, "enc.dep", fin, nbr)
    findep = mlp_np(params, "enc.indep", fin, nbr)
    fobj = np.concatenate([fdep, findep], axis=1)
    pos = mlp_np(params, "enc.pos", fdep, 2)
    logits = mlp_np(params, "enc.cls", findep, 2)
    return {"f_loc": floc, "f_in": fin, "f_dep": fdep, "f_indep": findep,
            "f_obj": fobj, "pos": pos, "logits": logits}


def split_position(pos_row: np.ndarray):
    """g_pos head output -> (offset (2,), distance)."""
    pos_row = np.asarray(pos_row).reshape(-1)
    return pos_row[:2].copy(), float(pos_row[2])
