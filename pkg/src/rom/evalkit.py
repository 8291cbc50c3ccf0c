"""Evaluation: object-wise and frame-wise P/R/F1, detection-to-GT
assignment, auxiliary-task metrics, and report formatting."""

from __future__ import annotations

import json

import numpy as np

from . import kernels


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _check_one_to_one(pairs_list):
    for pairs in pairs_list:
        if len({i for i, _ in pairs}) != len(pairs) or len({j for _, j in pairs}) != len(pairs):
            raise ValueError("match list is not one-to-one")


def match_metrics(predicted, gt, mode: str) -> dict:
    """P/R/F1 over per-pair match lists.

    object-wise pools confusion counts over all pairs; frame-wise averages
    per-pair P, R, and F1 independently. Frame pairs with zero GT matches
    are excluded from the recall and F1 averages (undefined ratio); pairs
    with zero predictions are excluded from the precision average.
    """
    if mode not in ("object-wise", "frame-wise"):
        raise ValueError(f"unknown mode {mode!r}")
    _check_one_to_one(predicted)
    _check_one_to_one(gt)
    if mode == "object-wise":
        correct = sum(len(set(map(tuple, p)) & set(map(tuple, g)))
                      for p, g in zip(predicted, gt))
        n_pred = sum(len(p) for p in predicted)
        n_gt = sum(len(g) for g in gt)
        prec = correct / n_pred if n_pred else 0.0
        rec = correct / n_gt if n_gt else 0.0
        return {"precision": prec, "recall": rec, "f1": _f1(prec, rec),
                "correct": correct, "predicted": n_pred, "gt": n_gt,
                "mode": mode}
    ps, rs, fs = [], [], []
    correct_total = pred_total = gt_total = 0
    for p, g in zip(predicted, gt):
        correct = len(set(map(tuple, p)) & set(map(tuple, g)))
        correct_total += correct
        pred_total += len(p)
        gt_total += len(g)
        if p:
            ps.append(correct / len(p))
        if g:
            rs.append(correct / len(g))
            prec = correct / len(p) if p else 0.0
            fs.append(_f1(prec, correct / len(g)))
    return {"precision": float(np.mean(ps)) if ps else 0.0,
            "recall": float(np.mean(rs)) if rs else 0.0,
            "f1": float(np.mean(fs)) if fs else 0.0,
            "correct": correct_total, "predicted": pred_total, "gt": gt_total,
            "mode": mode}


def assign_detections_to_gt(det_boxes, gt_boxes) -> dict:
    """Injective partial map detection index -> GT index.

    A detection is assignable to the GT box of maximal IoU when that IoU
    is strictly greater than 0.5; competing detections for one GT are
    resolved greedily by descending IoU, ties by lowest detection index.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if det_boxes.size == 0 or gt_boxes.size == 0:
        return {}
    iou = kernels.iou_matrix(det_boxes, gt_boxes)
    cands = []
    for d in range(det_boxes.shape[0]):
        g = int(iou[d].argmax())
        if iou[d, g] > 0.5:
            cands.append((-iou[d, g], d, g))
    cands.sort()
    out = {}
    taken = set()
    for _, d, g in cands:
        if g not in taken:
            out[d] = g
            taken.add(g)
    return out


def aux_metrics(pred_labels, gt_labels, pred_pos, gt_pos, pred_dist, gt_dist) -> dict:
    """Classification accuracy plus position/distance error statistics.

    Positions are 3D points (camera frame); distances are scalars.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    acc = float((pred_labels == gt_labels).mean()) if len(gt_labels) else 0.0
    pos_err = np.linalg.norm(np.asarray(pred_pos, dtype=np.float64)
                             - np.asarray(gt_pos, dtype=np.float64), axis=1)
    dist_err = np.abs(np.asarray(pred_dist, dtype=np.float64)
                      - np.asarray(gt_dist, dtype=np.float64))

    def stats(err):
        if len(err) == 0:
            return {"mean": 0.0, "median": 0.0, "rate_0.5": 0.0, "rate_1.0": 0.0}
        return {"mean": float(err.mean()), "median": float(np.median(err)),
                "rate_0.5": float((err <= 0.5).mean()),
                "rate_1.0": float((err <= 1.0).mean())}

    return {"accuracy": acc, "position": stats(pos_err), "distance": stats(dist_err)}


def backproject(bbox, offset, dist, intrinsics) -> np.ndarray:
    """Recover the camera-frame 3D point from (bbox center + offset, d)."""
    u = (bbox[0] + bbox[2]) / 2.0 + offset[0]
    v = (bbox[1] + bbox[3]) / 2.0 + offset[1]
    ray = np.array([
        (u * intrinsics["width"] - intrinsics["cx"]) / intrinsics["fx"],
        (v * intrinsics["height"] - intrinsics["cy"]) / intrinsics["fy"],
        1.0,
    ])
    return dist * ray / np.linalg.norm(ray)


# -- reports ----------------------------------------------------------------


def _round(x, nd=6):
    if isinstance(x, float):
        return round(x, nd)
    if isinstance(x, dict):
        return {k: _round(v, nd) for k, v in x.items()}
    return x


def build_report(groups: dict) -> dict:
    """groups: name -> (predicted lists, gt lists [, aux dict])."""
    report = {}
    for name, entry in groups.items():
        pred, gt = entry[0], entry[1]
        section = {
            "pairs": len(gt),
            "object_wise": _round(match_metrics(pred, gt, "object-wise")),
            "frame_wise": _round(match_metrics(pred, gt, "frame-wise")),
        }
        if len(entry) > 2 and entry[2] is not None:
            section["aux"] = _round(entry[2])
        report[name] = section
    return report


def format_report(report: dict) -> str:
    lines = []
    hdr = f"{'section':<12} {'mode':<12} {'F1':>8} {'Prec':>8} {'Rec':>8} {'pairs':>6}"
    lines.append(hdr)
    lines.append("-" * len(hdr))
    for name, section in report.items():
        for mode_key, label in (("object_wise", "object-wise"), ("frame_wise", "frame-wise")):
            m = section[mode_key]
            lines.append(f"{name:<12} {label:<12} {m['f1']:>8.3f} "
                         f"{m['precision']:>8.3f} {m['recall']:>8.3f} "
                         f"{section['pairs']:>6d}")
        if "aux" in section:
            a = section["aux"]
            lines.append(f"{name:<12} {'aux':<12} acc {a['accuracy']:.3f}  "
                         f"pos med {a['position']['median']:.3f}  "
                         f"dist med {a['distance']['median']:.3f}")
    return "\n".join(lines)


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=False)
        fh.write("\n")
