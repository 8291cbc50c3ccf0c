"""Scene-pair corpus I/O: JSON Lines, one ScenePair per line, schema 1.

Visual features are embedded as float lists; json round-trips float64
exactly, so write/read preserves every field bit-for-bit.
"""

from __future__ import annotations

import json

import numpy as np

from .scenegen import Detection, ScenePair

SCHEMA_VERSION = 1


class CorpusError(ValueError):
    pass


def _det_obj(d: Detection) -> dict:
    return {
        "instance": d.instance_id,
        "label": d.label,
        "bbox": d.bbox.tolist(),
        "offset": d.offset.tolist(),
        "dist": d.dist,
        "center_cam": d.center_cam.tolist(),
        "view_angle": d.view_angle,
    }


def _det_from(obj: dict) -> Detection:
    return Detection(
        instance_id=obj["instance"],
        label=obj["label"],
        bbox=np.array(obj["bbox"]),
        offset=np.array(obj["offset"]),
        dist=obj["dist"],
        center_cam=np.array(obj["center_cam"]),
        view_angle=obj["view_angle"],
    )


def pair_to_obj(pair: ScenePair) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "pair_id": pair.pair_id,
        "difficulty": pair.difficulty,
        "d_mean": pair.d_mean,
        "angle_mean_deg": pair.angle_mean_deg,
        "detections1": [_det_obj(d) for d in pair.det1],
        "detections2": [_det_obj(d) for d in pair.det2],
        "gt_matches": [list(m) for m in pair.gt_matches],
        "rel_dist1": pair.rel_dist1.tolist(),
        "rel_dist2": pair.rel_dist2.tolist(),
        "cam1": pair.cam1,
        "cam2": pair.cam2,
        "features1": pair.feats1.tolist() if pair.feats1 is not None else None,
        "features2": pair.feats2.tolist() if pair.feats2 is not None else None,
        "keypoints": [[list(p1), list(p2)] for p1, p2 in pair.keypoints],
    }


def pair_from_obj(obj: dict) -> ScenePair:
    if obj.get("schema") != SCHEMA_VERSION:
        raise CorpusError(f"unsupported corpus schema {obj.get('schema')!r}")
    return ScenePair(
        pair_id=obj["pair_id"],
        det1=[_det_from(d) for d in obj["detections1"]],
        det2=[_det_from(d) for d in obj["detections2"]],
        gt_matches=[tuple(m) for m in obj["gt_matches"]],
        rel_dist1=np.array(obj["rel_dist1"]),
        rel_dist2=np.array(obj["rel_dist2"]),
        d_mean=obj["d_mean"],
        angle_mean_deg=obj["angle_mean_deg"],
        difficulty=obj["difficulty"],
        cam1=obj["cam1"],
        cam2=obj["cam2"],
        feats1=np.array(obj["features1"]) if obj["features1"] is not None else None,
        feats2=np.array(obj["features2"]) if obj["features2"] is not None else None,
        keypoints=[(tuple(p1), tuple(p2)) for p1, p2 in obj["keypoints"]],
    )


def write_corpus(path, pairs) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps(pair_to_obj(p)) + "\n")


def read_corpus(path) -> list:
    pairs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                pairs.append(pair_from_obj(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as err:
                raise CorpusError(f"{path}:{ln}: malformed record ({err})") from err
    return pairs


def read_keypoint_file(path) -> dict:
    """External keypoint matches: JSONL of {pair_id, keypoints: [[[u,v],[u,v]]]}."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out[rec["pair_id"]] = [
                    (tuple(p1), tuple(p2)) for p1, p2 in rec["keypoints"]
                ]
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise CorpusError(f"{path}:{ln}: malformed record ({err})") from err
    return out
