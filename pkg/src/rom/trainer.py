"""Four-term training loss, Adam, the training loop, and checkpointing.

Loss terms: affinity (negative log-likelihood of the GT assignment under
the Sinkhorn output), per-class weighted cross entropy, 3D position
regression, and relative-distance regression, combined as a weighted sum
with defaults (1, 1, 0.1, 0.1).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import matcher
from .agnn import ordered_pair_targets, refine, rel_distance_graph
from .config import ModelConfig, TrainConfig, model_config_from_dict
from .diffcore import Graph, log_softmax_rows
from .encoder import encode_objects
from .nnutil import bind_params, collect_grads
from .scenegen import ScenePair

PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# -- numeric loss terms (reference semantics, used directly in tests) -------


def affinity_loss(p: np.ndarray, matches, unmatched1, unmatched2) -> float:
    """Mean -log P over GT matches and GT dustbin assignments."""
    p = np.asarray(p, dtype=np.float64)
    m, n = p.shape[0] - 1, p.shape[1] - 1
    terms = [p[i, j] for i, j in matches]
    terms += [p[i, n] for i in unmatched1]
    terms += [p[m, j] for j in unmatched2]
    if not terms:
        return 0.0
    return float(-np.mean(np.log(np.maximum(terms, PROB_FLOOR))))


def classification_loss(logits: np.ndarray, labels, class_weights) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("class weights must be strictly positive")
    if np.any(labels >= logits.shape[1]) or np.any(labels < 0):
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = logp[np.arange(len(labels)), labels]
    return float(-np.mean(w[labels] * picked))


def _position_terms(pred, gt, boxes):
    """Per-object squared residuals and the inclusion mask (offset rule)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    include = (np.abs(gt[:, 0]) <= widths) & (np.abs(gt[:, 1]) <= heights)
    sq = ((pred - gt) ** 2).sum(axis=1)
    return sq, include


def position_loss(pred1, gt1, boxes1, pred2, gt2, boxes2) -> float:
    """Mean squared position/distance residuals per image, summed.

    Objects whose GT offset exceeds the box size in either dimension are
    excluded; the denominators stay at the full object counts.
    """
    total = 0.0
    for pred, gt, boxes in ((pred1, gt1, boxes1), (pred2, gt2, boxes2)):
        n = len(gt)
        if n == 0:
            continue
        sq, include = _position_terms(pred, gt, boxes)
        total += float(sq[include].sum()) / n
    return total


def rel_distance_loss(pred_rel, gt_rel) -> float:
    """Unnormalized sum of squared errors over ordered pairs i != j."""
    total = 0.0
    for pred, gt in zip(pred_rel, gt_rel):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        n = gt.shape[0]
        for i in range(n):
            for j in range(n):
                if i != j:
                    total += (pred[i, j] - gt[i, j]) ** 2
    return float(total)


def total_loss(parts: dict, tc: TrainConfig) -> float:
    return (tc.lambda_aff * parts["aff"] + tc.lambda_cls * parts["cls"]
            + tc.lambda_pos * parts["pos"] + tc.lambda_rel * parts["rel"])


def class_weights_from_corpus(pairs, num_classes: int) -> np.ndarray:
    """Inverse-frequency weights normalized to mean 1 over seen classes."""
    counts = np.zeros(num_classes)
    for pair in pairs:
        for det in list(pair.det1) + list(pair.det2):
            counts[det.label] += 1
    w = np.ones(num_classes)
    seen = counts > 0
    if seen.any():
        inv = 1.0 / counts[seen]
        w[seen] = inv / inv.mean()
    return w


# -- differentiable per-pair loss graph -------------------------------------


def build_pair_loss(params: dict, cfg: ModelConfig, tc: TrainConfig,
                    feats1, boxes1, labels1, posgt1, rel1,
                    feats2, boxes2, labels2, posgt2, rel2,
                    matches, unmatched1, unmatched2,
                    class_weights) -> tuple:
    """Build the full forward graph and the weighted total loss.

    Returns (graph, param_nodes, loss_node, parts) where parts maps each
    term name to its scalar value.
    """
    g = Graph()
    nodes = bind_params(g, params)
    m, n = len(labels1), len(labels2)

    enc1 = encode_objects(g, nodes, cfg, g.constant(feats1), g.constant(boxes1))
    enc2 = encode_objects(g, nodes, cfg, g.constant(feats2), g.constant(boxes2))
    x1, x2 = refine(g, nodes, cfg, enc1["f_obj"], enc2["f_obj"])
    sbar = matcher.score_graph(g, x1, x2, nodes["match.z"])
    p = matcher.sinkhorn_graph(g, sbar, cfg.sinkhorn_iters)

    # affinity: mean -log P at supervised entries, via a 0/1 mask
    mask = np.zeros((m + 1, n + 1))
    for i, j in matches:
        mask[i, j] = 1.0
    for i in unmatched1:
        mask[i, n] = 1.0
    for j in unmatched2:
        mask[m, j] = 1.0
    count = max(1.0, mask.sum())
    logp = g.log(g.add(p, g.constant(PROB_FLOOR)))
    l_aff = g.smul(g.sum_all(g.mul(g.constant(mask), logp)), -1.0 / count)

    # classification: per-class weighted cross entropy, averaged over objects
    def cls_mask(labels):
        w = np.zeros((len(labels), cfg.num_classes))
        for r, y in enumerate(labels):
            w[r, y] = class_weights[y]
        return w

    lsm1 = log_softmax_rows(g, enc1["logits"])
    lsm2 = log_softmax_rows(g, enc2["logits"])
    picked = g.add(g.sum_all(g.mul(g.constant(cls_mask(labels1)), lsm1)),
                   g.sum_all(g.mul(g.constant(cls_mask(labels2)), lsm2)))
    l_cls = g.smul(picked, -1.0 / (m + n))

    # position: squared residuals, per-image mean over the full count,
    # excluded objects masked out
    def pos_term(enc, posgt, boxes, cnt):
        sq, include = _position_terms(np.zeros_like(posgt), posgt, boxes)
        row_w = np.where(include, 1.0 / cnt, 0.0)[:, None] * np.ones((1, 3))
        diff = g.sub(enc["pos"], g.constant(posgt))
        return g.sum_all(g.mul(g.constant(row_w), g.mul(diff, diff)))

    l_pos = g.add(pos_term(enc1, posgt1, boxes1, m), pos_term(enc2, posgt2, boxes2, n))

    # relative distance: unnormalized squared error over ordered pairs
    rel_nodes = []
    for x, rel, cnt in ((x1, rel1, m), (x2, rel2, n)):
        if cnt < 2:
            continue
        pred = rel_distance_graph(g, nodes, x, cnt)
        diff = g.sub(pred, g.constant(ordered_pair_targets(rel)))
        rel_nodes.append(g.sum_all(g.mul(diff, diff)))
    if rel_nodes:
        l_rel = rel_nodes[0]
        for rn in rel_nodes[1:]:
            l_rel = g.add(l_rel, rn)
    else:
        l_rel = g.constant(0.0)

    loss = g.add(g.add(g.smul(l_aff, tc.lambda_aff), g.smul(l_cls, tc.lambda_cls)),
                 g.add(g.smul(l_pos, tc.lambda_pos), g.smul(l_rel, tc.lambda_rel)))
    parts = {"aff": float(g.value(l_aff)[0, 0]),
             "cls": float(g.value(l_cls)[0, 0]),
             "pos": float(g.value(l_pos)[0, 0]),
             "rel": float(g.value(l_rel)[0, 0]),
             "total": float(g.value(loss)[0, 0])}
    return g, nodes, loss, parts


def pair_training_arrays(pair: ScenePair, rng, tc: TrainConfig, augment=True):
    """Subsample to the object cap and add feature noise; returns the
    arrays build_pair_loss expects."""
    def side(dets, feats, rel):
        idx = np.arange(len(dets))
        if len(dets) > tc.max_objects:
            idx = np.sort(rng.choice(len(dets), size=tc.max_objects, replace=False))
        f = feats[idx].copy()
        if augment and tc.feature_noise_std > 0:
            f = f + rng.normal(0.0, tc.feature_noise_std, size=f.shape)
        boxes = np.stack([dets[i].bbox for i in idx])
        labels = [dets[i].label for i in idx]
        posgt = np.stack([np.concatenate([dets[i].offset, [dets[i].dist]]) for i in idx])
        return idx, f, boxes, labels, posgt, rel[np.ix_(idx, idx)]

    idx1, f1, b1, y1, p1, r1 = side(pair.det1, pair.feats1, pair.rel_dist1)
    idx2, f2, b2, y2, p2, r2 = side(pair.det2, pair.feats2, pair.rel_dist2)
    map1 = {orig: new for new, orig in enumerate(idx1)}
    map2 = {orig: new for new, orig in enumerate(idx2)}
    matches = [(map1[i], map2[j]) for i, j in pair.gt_matches
               if i in map1 and j in map2]
    mset1 = {i for i, _ in matches}
    mset2 = {j for _, j in matches}
    un1 = [i for i in range(len(idx1)) if i not in mset1]
    un2 = [j for j in range(len(idx2)) if j not in mset2]
    return (f1, b1, y1, p1, r1, f2, b2, y2, p2, r2, matches, un1, un2)


# -- optimizer --------------------------------------------------------------


def init_adam_state(params: dict) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
            "t": 0}


def adam_step(params: dict, grads: dict, state: dict, tc: TrainConfig) -> None:
    for k, gr in grads.items():
        if not np.all(np.isfinite(gr)):
            raise TrainingError(f"non-finite gradient for parameter {k!r}")
    state["t"] += 1
    t = state["t"]
    b1, b2 = tc.adam_beta1, tc.adam_beta2
    for k in params:
        gr = grads[k]
        state["m"][k] = b1 * state["m"][k] + (1 - b1) * gr
        state["v"][k] = b2 * state["v"][k] + (1 - b2) * gr * gr
        mhat = state["m"][k] / (1 - b1**t)
        vhat = state["v"][k] / (1 - b2**t)
        params[k] = params[k] - tc.learning_rate * mhat / (np.sqrt(vhat) + tc.adam_eps)


# -- training loop ----------------------------------------------------------


def train_epoch(pairs, params: dict, state: dict, cfg: ModelConfig,
                tc: TrainConfig, class_weights, rng) -> dict:
    """One pass over the corpus with batched gradient accumulation."""
    order = rng.permutation(len(pairs))
    sums = {"aff": 0.0, "cls": 0.0, "pos": 0.0, "rel": 0.0, "total": 0.0}
    seen = 0
    for start in range(0, len(order), tc.batch_size):
        batch = order[start:start + tc.batch_size]
        acc = {k: np.zeros_like(v) for k, v in params.items()}
        for pi in batch:
            arrays = pair_training_arrays(pairs[pi], rng, tc)
            g, nodes, loss, parts = build_pair_loss(
                params, cfg, tc, *arrays, class_weights=class_weights)
            g.backward(loss)
            grads = collect_grads(g, nodes)
            for k in acc:
                acc[k] += grads[k]
            for k in sums:
                sums[k] += parts[k]
            seen += 1
        for k in acc:
            acc[k] /= len(batch)
        adam_step(params, acc, state, tc)
    return {k: v / max(1, seen) for k, v in sums.items()}


def train(pairs, cfg: ModelConfig, tc: TrainConfig, seed: int,
          params: dict = None, log=None):
    """Full training run; returns (params, per-epoch metric history)."""
    if not pairs:
        raise TrainingError("empty corpus")
    if params is None:
        params = init_params_for_training(cfg, seed)
    state = init_adam_state(params)
    weights = class_weights_from_corpus(pairs, cfg.num_classes)
    rng = np.random.default_rng(seed + 1)
    history = []
    for epoch in range(tc.epochs):
        metrics = train_epoch(pairs, params, state, cfg, tc, weights, rng)
        metrics["epoch"] = epoch
        history.append(metrics)
        if log is not None:
            log(f"epoch {epoch:3d}  total {metrics['total']:.4f}  "
                f"aff {metrics['aff']:.4f}  cls {metrics['cls']:.4f}  "
                f"pos {metrics['pos']:.4f}  rel {metrics['rel']:.4f}")
    return params, history


def init_params_for_training(cfg: ModelConfig, seed: int) -> dict:
    from .pipeline import init_params
    return init_params(cfg, seed)


# -- checkpointing ----------------------------------------------------------

_MAGIC = b"ROMCKPT1\n"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict, cfg: ModelConfig,
                    opt_state: dict = None, epoch: int = 0) -> None:
    arrays = [(name, params[name]) for name in sorted(params)]
    if opt_state is not None:
        arrays += [(f"opt.m.{k}", opt_state["m"][k]) for k in sorted(opt_state["m"])]
        arrays += [(f"opt.v.{k}", opt_state["v"][k]) for k in sorted(opt_state["v"])]
    header = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "opt_step": opt_state["t"] if opt_state is not None else None,
        "config": {
            "d_viz": cfg.d_viz, "num_classes": cfg.num_classes,
            "loc_layers": list(cfg.loc_layers),
            "branch_layers": list(cfg.branch_layers),
            "pos_hidden": cfg.pos_hidden, "cls_hidden": cfg.cls_hidden,
            "dist_hidden": cfg.dist_hidden,
            "agnn_stages": list(cfg.agnn_stages),
            "agnn_hidden": cfg.agnn_hidden,
            "sinkhorn_iters": cfg.sinkhorn_iters,
        },
        "arrays": [{"name": name, "shape": list(arr.shape),
                    "dtype": arr.dtype.str} for name, arr in arrays],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path, expect_cfg: ModelConfig = None):
    """Returns (params, cfg, opt_state, epoch). Rejects corrupt files and
    config mismatches."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        raw = fh.read(4)
        if len(raw) < 4:
            raise CheckpointError("truncated checkpoint header")
        (hlen,) = struct.unpack("<I", raw)
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise CheckpointError("truncated checkpoint header")
        try:
            header = json.loads(blob)
        except json.JSONDecodeError as err:
            raise CheckpointError(f"corrupt header: {err}") from err
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported version {header.get('version')}")
        cfg = model_config_from_dict(header["config"])
        if expect_cfg is not None and cfg != expect_cfg:
            raise CheckpointError("checkpoint config does not match expected config")
        params = {}
        opt = {"m": {}, "v": {}, "t": header.get("opt_step") or 0}
        for spec in header["arrays"]:
            dt = np.dtype(spec["dtype"])
            nbytes = int(np.prod(spec["shape"])) * dt.itemsize
            buf = fh.read(nbytes)
            if len(buf) < nbytes:
                raise CheckpointError(f"truncated payload at {spec['name']!r}")
            arr = np.frombuffer(buf, dtype=dt).reshape(spec["shape"]).copy()
            name = spec["name"]
            if name.startswith("opt.m."):
                opt["m"][name[6:]] = arr
            elif name.startswith("opt.v."):
                opt["v"][name[6:]] = arr
            else:
                params[name] = arr
        if not opt["m"]:
            opt = None
        return params, cfg, opt, header.get("epoch", 0)
