"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

Set ROM_NO_NUMBA=1 to force the numpy path (useful for debugging and for
the benchmark in benchmarks/bench_kernels.py). The `*_np` reference
implementations are always importable so the two paths can be compared.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_wanted() -> bool:
    return os.environ.get("ROM_NO_NUMBA", "").lower() not in ("1", "true", "yes")


USE_NUMBA = False
if _numba_wanted():
    try:
        from numba import njit

        USE_NUMBA = True
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):  # no-op decorator
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# -- log-domain Sinkhorn ----------------------------------------------------


def sinkhorn_log_np(scores, iters):
    """Log-domain Sinkhorn on a dustbin-augmented (M+1)x(N+1) score matrix.

    Row marginals target (1,...,1,N); column marginals target (1,...,1,M).
    Returns the assignment matrix P.
    """
    s = np.asarray(scores, dtype=np.float64)
    m1, n1 = s.shape
    m, n = m1 - 1, n1 - 1
    log_r = np.zeros(m1)
    log_r[m] = np.log(n) if n > 0 else 0.0
    log_c = np.zeros(n1)
    log_c[n] = np.log(m) if m > 0 else 0.0
    u = np.zeros(m1)
    v = np.zeros(n1)
    for _ in range(iters):
        z = s + v[None, :]
        mx = z.max(axis=1)
        u = log_r - (mx + np.log(np.exp(z - mx[:, None]).sum(axis=1)))
        z = s + u[:, None]
        mx = z.max(axis=0)
        v = log_c - (mx + np.log(np.exp(z - mx[None, :]).sum(axis=0)))
    return np.exp(s + u[:, None] + v[None, :])


@njit(cache=True)
def _sinkhorn_log_jit(s, iters):
    m1, n1 = s.shape
    m, n = m1 - 1, n1 - 1
    log_r = np.zeros(m1)
    if n > 0:
        log_r[m] = np.log(n)
    log_c = np.zeros(n1)
    if m > 0:
        log_c[n] = np.log(m)
    u = np.zeros(m1)
    v = np.zeros(n1)
    for _ in range(iters):
        for i in range(m1):
            mx = -np.inf
            for j in range(n1):
                z = s[i, j] + v[j]
                if z > mx:
                    mx = z
            acc = 0.0
            for j in range(n1):
                acc += np.exp(s[i, j] + v[j] - mx)
            u[i] = log_r[i] - (mx + np.log(acc))
        for j in range(n1):
            mx = -np.inf
            for i in range(m1):
                z = s[i, j] + u[i]
                if z > mx:
                    mx = z
            acc = 0.0
            for i in range(m1):
                acc += np.exp(s[i, j] + u[i] - mx)
            v[j] = log_c[j] - (mx + np.log(acc))
    p = np.empty((m1, n1))
    for i in range(m1):
        for j in range(n1):
            p[i, j] = np.exp(s[i, j] + u[i] + v[j])
    return p


def sinkhorn_log(scores, iters):
    s = np.ascontiguousarray(scores, dtype=np.float64)
    if USE_NUMBA:
        return _sinkhorn_log_jit(s, iters)
    return sinkhorn_log_np(s, iters)


def marginal_residuals(p):
    """Row/column marginal residuals against the dustbin-augmented targets."""
    m1, n1 = p.shape
    m, n = m1 - 1, n1 - 1
    tr = np.ones(m1)
    tr[m] = n
    tc = np.ones(n1)
    tc[n] = m
    return p.sum(axis=1) - tr, p.sum(axis=0) - tc


def sinkhorn_residual_trace(scores, iters):
    """Euclidean norm of the full marginal residual after each iteration."""
    s = np.asarray(scores, dtype=np.float64)
    out = np.empty(iters)
    for k in range(1, iters + 1):
        p = sinkhorn_log_np(s, k)
        rr, rc = marginal_residuals(p)
        out[k - 1] = np.sqrt((rr**2).sum() + (rc**2).sum())
    return out


# -- keypoint counting ------------------------------------------------------


def count_keypoint_hits_np(kp1, kp2, boxes1, boxes2):
    """Count keypoint pairs whose endpoints fall in box i / box j.

    Containment is boundary-inclusive; a point inside overlapping boxes
    contributes to every containing box.
    """
    m = boxes1.shape[0]
    n = boxes2.shape[0]
    counts = np.zeros((m, n), dtype=np.int64)
    for k in range(kp1.shape[0]):
        u1, v1 = kp1[k]
        u2, v2 = kp2[k]
        for i in range(m):
            if boxes1[i, 0] <= u1 <= boxes1[i, 2] and boxes1[i, 1] <= v1 <= boxes1[i, 3]:
                for j in range(n):
                    if boxes2[j, 0] <= u2 <= boxes2[j, 2] and boxes2[j, 1] <= v2 <= boxes2[j, 3]:
                        counts[i, j] += 1
    return counts


@njit(cache=True)
def _count_keypoint_hits_jit(kp1, kp2, boxes1, boxes2):
    m = boxes1.shape[0]
    n = boxes2.shape[0]
    counts = np.zeros((m, n), dtype=np.int64)
    for k in range(kp1.shape[0]):
        u1 = kp1[k, 0]
        v1 = kp1[k, 1]
        u2 = kp2[k, 0]
        v2 = kp2[k, 1]
        for i in range(m):
            if boxes1[i, 0] <= u1 <= boxes1[i, 2] and boxes1[i, 1] <= v1 <= boxes1[i, 3]:
                for j in range(n):
                    if boxes2[j, 0] <= u2 <= boxes2[j, 2] and boxes2[j, 1] <= v2 <= boxes2[j, 3]:
                        counts[i, j] += 1
    return counts


def count_keypoint_hits(kp1, kp2, boxes1, boxes2):
    kp1 = np.ascontiguousarray(kp1, dtype=np.float64).reshape(-1, 2)
    kp2 = np.ascontiguousarray(kp2, dtype=np.float64).reshape(-1, 2)
    boxes1 = np.ascontiguousarray(boxes1, dtype=np.float64).reshape(-1, 4)
    boxes2 = np.ascontiguousarray(boxes2, dtype=np.float64).reshape(-1, 4)
    if USE_NUMBA:
        return _count_keypoint_hits_jit(kp1, kp2, boxes1, boxes2)
    return count_keypoint_hits_np(kp1, kp2, boxes1, boxes2)


# -- box IoU ----------------------------------------------------------------


def iou_matrix_np(boxes_a, boxes_b):
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            ix = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            iy = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if ix <= 0.0 or iy <= 0.0:
                continue
            inter = ix * iy
            area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            out[i, j] = inter / (area_a + area_b - inter)
    return out


@njit(cache=True)
def _iou_matrix_jit(a, b):
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            ix = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            iy = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if ix <= 0.0 or iy <= 0.0:
                continue
            inter = ix * iy
            area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            out[i, j] = inter / (area_a + area_b - inter)
    return out


def iou_matrix(boxes_a, boxes_b):
    a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    if USE_NUMBA:
        return _iou_matrix_jit(a, b)
    return iou_matrix_np(a, b)
