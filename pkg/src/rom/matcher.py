"""Pairwise scoring, dustbin augmentation, Sinkhorn, match extraction,
and keypoint-score fusion.

Sinkhorn runs in the log domain throughout: fused scores reach magnitudes
around 100 * ln(1+count), which would overflow a literal exp-and-normalize
implementation.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .diffcore import Graph, logsumexp_rows


# -- raw scores -------------------------------------------------------------


def score_matrix(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape[1] != x2.shape[1]:
        raise ValueError(f"feature widths differ: {x1.shape[1]} vs {x2.shape[1]}")
    return x1 @ x2.T


def augment_dustbin(scores: np.ndarray, z: float) -> np.ndarray:
    m, n = scores.shape
    out = np.full((m + 1, n + 1), float(z))
    out[:m, :n] = scores
    return out


def score_graph(g: Graph, x1: int, x2: int, z: int) -> int:
    """Graph version of score + dustbin. `z` is the 1x1 dustbin parameter."""
    s = g.matmul(x1, g.transpose(x2))
    m, n = g.value(s).shape
    ones_col = g.constant(np.ones((m, 1)))
    ones_row = g.constant(np.ones((1, n + 1)))
    top = g.concat_cols(s, g.matmul(ones_col, z))      # (m, n+1)
    bottom = g.matmul(z, ones_row)                     # (1, n+1)
    return g.transpose(g.concat_cols(g.transpose(top), g.transpose(bottom)))


# -- Sinkhorn ---------------------------------------------------------------


def sinkhorn(scores: np.ndarray, iterations: int) -> np.ndarray:
    """Numeric log-domain Sinkhorn on a dustbin-augmented score matrix."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return kernels.sinkhorn_log(s, iterations)


def sinkhorn_graph(g: Graph, sbar: int, iterations: int) -> int:
    """Differentiable log-domain Sinkhorn; returns the P node."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    m1, n1 = g.value(sbar).shape
    m, n = m1 - 1, n1 - 1
    log_r = np.zeros((m1, 1))
    if n > 0:
        log_r[m, 0] = np.log(n)
    log_c = np.zeros((1, n1))
    if m > 0:
        log_c[0, n] = np.log(m)
    log_r = g.constant(log_r)
    log_c = g.constant(log_c)
    v = g.constant(np.zeros((1, n1)))
    u = None
    for _ in range(iterations):
        u = g.sub(log_r, logsumexp_rows(g, g.add(sbar, v)))
        v = g.sub(log_c, g.transpose(logsumexp_rows(g, g.transpose(g.add(sbar, u)))))
    return g.exp(g.add(g.add(sbar, u), v))


# -- extraction -------------------------------------------------------------


def extract_assignment(p: np.ndarray):
    """Mutual-argmax matches from a dustbin-augmented assignment matrix.

    Ties break toward the lowest index (numpy argmax convention). Returns
    (matches, unmatched_rows, unmatched_cols).
    """
    p = np.asarray(p)
    m, n = p.shape[0] - 1, p.shape[1] - 1
    row_best = p.argmax(axis=1)
    col_best = p.argmax(axis=0)
    matches = [(i, int(row_best[i])) for i in range(m)
               if row_best[i] < n and col_best[row_best[i]] == i]
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    return (matches,
            [i for i in range(m) if i not in matched_rows],
            [j for j in range(n) if j not in matched_cols])


# -- keypoint fusion --------------------------------------------------------


def keypoint_scores(keypoints, boxes1, boxes2) -> np.ndarray:
    """Dustbin-augmented keypoint score matrix: ln(1 + count), dustbins 1.

    `keypoints` is a list of ((u1,v1),(u2,v2)) in normalized coordinates;
    a point inside several overlapping boxes counts toward each.
    """
    boxes1 = np.asarray(boxes1, dtype=np.float64).reshape(-1, 4)
    boxes2 = np.asarray(boxes2, dtype=np.float64).reshape(-1, 4)
    m, n = boxes1.shape[0], boxes2.shape[0]
    if keypoints:
        kp1 = np.array([k[0] for k in keypoints], dtype=np.float64)
        kp2 = np.array([k[1] for k in keypoints], dtype=np.float64)
        counts = kernels.count_keypoint_hits(kp1, kp2, boxes1, boxes2)
    else:
        counts = np.zeros((m, n), dtype=np.int64)
    out = np.ones((m + 1, n + 1))
    out[:m, :n] = np.log1p(counts)
    return out


def fuse_and_match(sbar_obj: np.ndarray, sbar_kp: np.ndarray, alpha: float,
                   iterations: int):
    """Sinkhorn + extraction on the fused score matrix S_obj + alpha * S_kp."""
    sbar_obj = np.asarray(sbar_obj, dtype=np.float64)
    sbar_kp = np.asarray(sbar_kp, dtype=np.float64)
    if sbar_obj.shape != sbar_kp.shape:
        raise ValueError(f"score shapes differ: {sbar_obj.shape} vs {sbar_kp.shape}")
    p = sinkhorn(sbar_obj + alpha * sbar_kp, iterations)
    matches, un1, un2 = extract_assignment(p)
    return p, matches, un1, un2
