"""End-to-end model: parameter init and the numpy inference path.

The differentiable (graph) forward lives in the trainer; this module's
numpy forward is numerically identical and is what evaluation and the
match CLI use.
"""

from __future__ import annotations

import numpy as np

from . import matcher
from .agnn import init_agnn_params, predict_rel_distance_np, refine_np
from .config import ModelConfig
from .encoder import encode_objects_np, init_encoder_params
from .scenegen import ScenePair


def init_params(cfg: ModelConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = init_encoder_params(cfg, rng)
    params.update(init_agnn_params(cfg, rng))
    params["match.z"] = np.array([[1.0]])
    return params


def forward_np(params: dict, cfg: ModelConfig, feats1, boxes1, feats2, boxes2) -> dict:
    enc1 = encode_objects_np(params, cfg, np.asarray(feats1, dtype=np.float64),
                             np.asarray(boxes1, dtype=np.float64))
    enc2 = encode_objects_np(params, cfg, np.asarray(feats2, dtype=np.float64),
                             np.asarray(boxes2, dtype=np.float64))
    x1, x2 = refine_np(params, cfg, enc1["f_obj"], enc2["f_obj"])
    s_obj = matcher.score_matrix(x1, x2)
    sbar = matcher.augment_dustbin(s_obj, params["match.z"][0, 0])
    return {"enc1": enc1, "enc2": enc2, "x1": x1, "x2": x2,
            "s_obj": s_obj, "sbar": sbar}


def match_pair(params: dict, cfg: ModelConfig, pair: ScenePair,
               alpha: float = 0.0, iterations: int = None,
               keypoints=None, with_aux: bool = False) -> dict:
    """Run the full matcher on one ScenePair.

    alpha > 0 fuses keypoint scores (from `keypoints` or the ones embedded
    in the pair). Returns matches, unmatched lists, and optionally the
    auxiliary-task predictions.
    """
    if iterations is None:
        iterations = cfg.sinkhorn_iters
    boxes1 = np.stack([d.bbox for d in pair.det1])
    boxes2 = np.stack([d.bbox for d in pair.det2])
    fwd = forward_np(params, cfg, pair.feats1, boxes1, pair.feats2, boxes2)
    if alpha != 0.0:
        kps = pair.keypoints if keypoints is None else keypoints
        s_kp = matcher.keypoint_scores(kps, boxes1, boxes2)
        p, matches, un1, un2 = matcher.fuse_and_match(fwd["sbar"], s_kp,
                                                      alpha, iterations)
    else:
        p = matcher.sinkhorn(fwd["sbar"], iterations)
        matches, un1, un2 = matcher.extract_assignment(p)
    out = {"p": p, "matches": matches, "unmatched1": un1, "unmatched2": un2,
           "s_obj": fwd["s_obj"]}
    if with_aux:
        out["pos1"] = fwd["enc1"]["pos"]
        out["pos2"] = fwd["enc2"]["pos"]
        out["labels1"] = fwd["enc1"]["logits"].argmax(axis=1)
        out["labels2"] = fwd["enc2"]["logits"].argmax(axis=1)
        out["rel1"] = predict_rel_distance_np(params, fwd["x1"])
        out["rel2"] = predict_rel_distance_np(params, fwd["x2"])
    return out
